"""ISS certification, constrained training and scenario reachability for LSTMs."""

__version__ = "0.1.0"

from ._backend import BACKEND
from .lstm import (ContractError, DivergenceError, LstmParams, LstmStack, LstmState, Model,
                   output, random_params, sigma_c, sigma_g, simulate, simulate_states, step)
from .plant import (InfeasibleChemistryError, PhPlantConfig, PhPlantState, PlantError, TankEmptyError,
                    benchmark_dataset, generate_dataset, ph_output, simulate_plant)
from .scenario import (LstmSystem, PlantSystem, ReachResult, ScenarioError, ScenarioSpec,
                       UncertifiedSampleWarning, estimate_rho, required_scenarios, sample_scenario,
                       sweep_rho)
from .signals import (DegenerateChannelError, MprsClass, NormalizationSpec, add_white_noise,
                      denormalize, fit_normalization, gen_mprs, normalize, substream)
from .stability import (BoxPreconditionError, CertificateRequiredError, IssCertificate,
                        analytic_state_bound, iss_check, iss_check_stack, lyapunov_decrease,
                        norm_1_induced, norm_inf_induced)
from .training import (TrainConfig, TrainingFailedError, fit_index, free_run, init_params,
                       loss_gradient, mse_loss, train)

__all__ = [name for name in dir() if not name.startswith("_")]

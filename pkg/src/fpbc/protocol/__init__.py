from .params import apply_perturbation, get_param, resolve, set_param
from .scenarios import (
    ProtocolConfig,
    ScenarioReport,
    Simulation,
    calibrate,
    recovery_ratio,
    run_four_scenarios,
    simulate,
)
from .budget import (
    ErrorBudget,
    TriadDecomposition,
    error_budget,
    eps_param_bound,
    gain_factor,
    operator_difference_norm,
    triad_decomposition,
)
from .sensitivity import richardson, sensitivity
from .studies import (
    CompressionConfig,
    EncoderStudyConfig,
    MasklessConfig,
    StudyTable,
    compression_sweep,
    encoder_study,
    maskless_control,
)

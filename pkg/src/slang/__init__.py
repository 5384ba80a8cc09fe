"""Low-rank plus diagonal natural-gradient variational inference."""

from .errors import ConfigError, DivergenceError, NumericError, ParseError, SlangError, UnsupportedLabelError
from .linalg import (
    EigPair,
    LowRankDiagMatrix,
    fast_eig,
    logdet_and_trace_inverse,
    sample,
    symmetric_factor_apply,
    woodbury_solve,
)
from .models import Dataset, LogisticRegression, MlpArchitecture, log_likelihood, per_example_grads
from .optimizers import (
    METHODS,
    DenseState,
    GaussianState,
    OptimizerConfig,
    fit,
    full_gaussian_reference,
    init_state,
    mean_field_step,
    online_eig_step,
    slang_step,
    von_full_step,
    vogn_full_step,
)
from .metrics import (
    DenseGaussian,
    MetricsRecord,
    elbo_estimate,
    kl_to_prior,
    logistic_elbo_quadrature,
    predictive_nll,
    rmse,
    symmetric_kl,
)
from .dataio import SplitSpec, load_libsvm, make_cubic_toy, parse_libsvm, serialize_libsvm, split

__version__ = "0.1.0"

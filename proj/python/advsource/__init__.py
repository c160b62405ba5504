"""Source-image suitability analysis for adversarial-attack benchmarking.

The heavy lifting lives in the C++ extension; this package re-exports its
public surface.
"""

from advsource._core import (  # noqa: F401
    ArgumentError,
    AttackConfig,
    Classifier,
    DataError,
    Ensemble,
    ImageTensor,
    IoError,
    MlpClassifier,
    NoiseConfig,
    NumericError,
    PreconditionError,
    Shape,
    ShapeError,
    filter_eligible,
    is_eligible,
    l2_norm,
    linf_norm,
    load_ensemble,
    load_images,
    load_records,
    loss_gradient,
    mse,
    one_minus_max,
    pearson,
    predict_class,
    predict_probs,
    project,
    q_ratio,
    quantize,
    run_attack,
    run_campaign,
    run_noise,
    softmax,
    store_model_ids,
    transfer_matrix,
    wasserstein,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"

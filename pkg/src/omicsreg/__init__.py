"""Multi-omics regression toolkit: image/dose feature extraction,
Lasso-based feature selection, epsilon-SVR modeling, and repeated
cross-validation evaluation of relative tumor-volume change."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, NumericalError  # noqa: F401
from .evaluation import (  # noqa: F401
    EvaluationReport,
    MetricSample,
    cohens_d,
    confidence_interval,
    effect_size_table,
    feature_label_correlations,
    format_ci,
    format_mean_sd,
    pairwise_correlation_heatmap,
    pearson_r,
    r_squared,
    repeated_cv_evaluate,
    rrmse,
    sweep_evaluate,
    vif,
)
from .features import (  # noqa: F401
    ExtractionConfig,
    FeatureMatrix,
    FeatureName,
    FeatureVector,
    LesionSample,
    Scenario,
    assemble_scenario,
    catalogue,
    combine_blocks,
    delta_features,
    delta_matrix,
    discretize,
    extract_blocks,
    extract_feature_vector,
    first_order,
    shape_features,
    texture_features,
    texture_matrix,
)
from .pipeline import (  # noqa: F401
    CohortManifest,
    PipelineConfig,
    load_manifest,
    run_evaluate,
    run_extract,
    run_report,
    run_select,
    run_synth,
)
from .regression import (  # noqa: F401
    GridSpec,
    KernelSpec,
    SVRHyperparams,
    SVRModel,
    default_grid,
    grid_search,
    gram_matrix,
    kernel_eval,
    svr_predict,
    svr_train,
)
from .selection import (  # noqa: F401
    FoldPlan,
    LassoFit,
    SelectionResult,
    correlation_prune,
    lasso_fit,
    lasso_k_nonzero,
    select_features,
    variance_filter,
)
from .synthetic import (  # noqa: F401
    SyntheticSpec,
    generate_feature_cohort,
    generate_volume_cohort,
)
from .volume import (  # noqa: F401
    FilterSpec,
    Mask3D,
    Volume3D,
    apply_filter,
    default_filters,
    haar_decompose,
    load_mask,
    load_volume,
    resample,
    resample_mask,
    save_mask,
    save_volume,
)

"""adforecast: GP forecasting of cognitive decline and 24-month conversion.

The package covers the full pipeline: longitudinal cohort ingestion and
preprocessing, exact GP regression with source/personalized/target variants
forecasting ADAS-Cog13 at 6/12/18/24 months, Cox proportional-hazards
conversion probabilities, a linear max-margin conversion classifier, a
patient-independent cross-validation harness, and a synthetic-cohort
generator with known ground truth.
"""

__version__ = "0.1.0"

from .cohort import (AlignmentError, ClinicalStatus, Cohort, CohortFormatError,
                     CohortSchema, ConversionLabel, FeatureGroup, VisitRecord,
                     align_windows, conversion_labels, ingest_cohort,
                     label_conversion, write_cohort)
from .preprocess import (SupervisedSet, ZNormalizer, build_supervised,
                         filter_min_visits, filter_missingness,
                         filter_required_months, forward_fill,
                         select_features, z_normalize)
from .kernels import LinearKernel, RBFKernel, kernel_eval
from .gp import BLRPosterior, ExactGPRegressor, NumericalError, blr_posterior
from .forecast import (HorizonForecast, HorizonPredictor, ensemble_average,
                       forecast, personalize, train_source, train_target)
from .survival import (BreslowBaseline, CoxPH, SurvivalRecord,
                       breslow_baseline, build_survival_records,
                       conversion_probabilities, cox_fit,
                       log_partial_likelihood)
from .classify import LinearSVM, hinge_objective
from .evaluation import (CVResult, CVSettings, FoldPlan, MetricsReport,
                         classification_metrics, group_stats, kfold_split,
                         kmeans, mae, run_cv, window_diff_stats)
from .synth import (CohortSpec, CohortTruth, generate_cohort,
                    generate_survival_data, synthetic_schema)

__all__ = [name for name in dir() if not name.startswith("_")]

import multiprocessing as mp

WORKERS = mp.cpu_count()

# Experimental defaults.
DEFAULT_ALPHA = 0.05
DEFAULT_LAMBDA = 0.15
DEFAULT_GROUP_SIZE = 5
DEFAULT_EPSILON = 1e-3
DEFAULT_L1_RATIO = 0.5
DEFAULT_FOLDS = 10
DEFAULT_NEIGHBORS = 3

# Numerical tolerances.
SYMMETRY_TOL = 1e-10
EIGEN_FLOOR = -1e-8
SINGULAR_TOL = 1e-12
ZERO_SCATTER = 1e-12
LARGE_SCORE = 1e12
# Relative pivot size below which a conditioning anchor counts as dependent.
RANK_TOL = 1e-8

# Sampler limits.
MAX_REJECTIONS = 50
ANCHOR_LIMIT = 500
SAMPLE_CHUNK = 10_000

# Wilcoxon.
MIN_PAIRED_LENGTH = 5
EXACT_MAX_PAIRS = 12

# Elasticnet optimizer.
MAX_ITER = 10_000
TOL = 1e-7

# Evaluation.
MAX_RESTRATIFY = 5

CHECKPOINT_VERSION = 1
OUTPUT_DIR_ENV = "DOFS_OUTPUT_DIR"

"""
Application-wide constants for vinecc.

Pipeline defaults reproduce the published settings: a bare invocation
decodes heatmaps, filters masks and fits closure curves exactly as the
reference pipeline does.
"""

from vinecc import __app_name__, __version__

# Application metadata
APP_NAME = __app_name__
APP_VERSION = __version__

# Berry heatmap decoding
DEFAULT_TAU = 0.05            # confidence threshold applied after suppression
DEFAULT_TOP_K = 1024          # keypoints kept per image
DEFAULT_UPSAMPLE_FACTOR = 8   # model output stride
DEFAULT_NMS_WINDOW = 3        # max-pool window (cells)
HEATMAP_RANGE_TOLERANCE = 1e-6

# IQR mask filtering
DEFAULT_IQR_MULTIPLIER = 1.5
DEFAULT_PERCENTILE_METHOD = "linear"
PERCENTILE_METHODS = (        # accepted by numpy.percentile
    "inverted_cdf", "averaged_inverted_cdf", "closest_observation",
    "interpolated_inverted_cdf", "hazen", "weibull", "linear",
    "median_unbiased", "normal_unbiased", "lower", "higher", "midpoint", "nearest",
)
DEFAULT_LOG_EPSILON = 1e-9

# Closure
CLOSURE_MODES = ("clipped", "literal")
CLOSURE_AGGREGATES = ("cluster_mean", "pooled")

# Asymptotic regression
DEFAULT_FRACTION_P = 0.95
LM_MAX_ITERATIONS = 500
LM_INITIAL_DAMPING = 1e-3
LM_DAMPING_FACTOR = 10.0
LM_MAX_DAMPING = 1e16
LM_RSS_RTOL = 1e-10
LM_GRADIENT_TOL = 1e-8
ASYMPTOTE_HEADROOM = 0.05     # asym0 = max(y) + 5% of the range of y

# Published closure-curve parameters (asymptote %, intercept %, rate /week, weeks)
REFERENCE_FITS = {
    "2020": {"asym": 94.58, "intercept": 42.24, "rate": 1.29, "time_to_asymptote_weeks": 3.46},
    "2024": {"asym": 93.67, "intercept": 52.36, "rate": 0.506, "time_to_asymptote_weeks": 4.31},
}

# Instance segmentation evaluation (COCO conventions)
IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = 101
SMALL_AREA_MAX = 32 ** 2      # area < 1024 px is small
LARGE_AREA_MIN = 96 ** 2      # area > 9216 px is large
COCO_MAX_DETECTIONS = 100

# Annotation categories
CLUSTER_CATEGORY = "cluster"
BERRY_CATEGORY = "berry"

# File formats
POINTS_CSV_HEADER = ("image_id", "x", "y")
KEYPOINTS_CSV_HEADER = ("x", "y", "score")
CLOSURE_CSV_HEADER = (
    "image_id",
    "cluster_id",
    "capture_time_weeks",
    "berry_pixels",
    "cluster_pixels",
    "vcc_percent",
)

# Plot geometry (SVG user units)
PLOT_WIDTH = 640
PLOT_HEIGHT = 400
PLOT_MARGIN = 56

# Exit codes
EXIT_OK = 0
EXIT_FORMAT = 2
EXIT_VALIDATION = 3
EXIT_COMPUTATION = 4

"""
App name: Takens Reservoir Toolkit (takres)
Description: Application-wide constants for experiment names, response and exit
             codes, result-file column names, environment variables and the
             numerical defaults shared by the usecase modules.
"""


class Constants:
    """
    Top-level container for all application constants.
    Organized into nested classes by category.
    """

    VERSION = "1.0.0"
    SCHEMA_VERSION = 1

    class Experiments:
        """Experiment names accepted by the harness (CLI and HTTP service)."""

        PREDICT = "predict"
        SCAN_TAU = "scan-tau"
        SCAN_MU = "scan-mu"
        TRRNN = "trrnn"
        SCAN_DELAY = "scan-delay"
        FHN_CONTROL = "fhn-control"
        NODE_SWEEP = "node-sweep"
        CCA = "cca"
        BOUNDS = "bounds"
        EMBED_ACF = "embed-acf"
        EMBED_FNN = "embed-fnn"
        EMBED = "embed"

        ALL = [
            PREDICT, SCAN_TAU, SCAN_MU, TRRNN, SCAN_DELAY, FHN_CONTROL,
            NODE_SWEEP, CCA, BOUNDS, EMBED_ACF, EMBED_FNN, EMBED,
        ]

    class ResponseCode:
        """HTTP-style status codes carried by usecase responses."""

        CODE_200 = 200  # OK
        CODE_202 = 202  # Accepted (run started, not yet complete)
        CODE_204 = 204  # No Content
        CODE_400 = 400  # Bad Request (invalid config / unknown experiment)
        CODE_404 = 404  # Not Found
        CODE_422 = 422  # Unprocessable (numerical precondition failed)
        CODE_500 = 500  # Internal Server Error
        CODE_503 = 503  # Service Unavailable (too many active runs)

    class ExitCode:
        """Process exit codes of the `takres` command."""

        SUCCESS = 0
        FAILURE = 1
        CONFIG_ERROR = 2
        DIVERGENCE_DOMINATED = 3

    class Env:
        """Environment variable names (read after .env is loaded)."""

        WORKERS = "TAKRES_WORKERS"
        LOG_LEVEL = "TAKRES_LOG_LEVEL"
        OUT_DIR = "TAKRES_OUT_DIR"
        MAX_ACTIVE_RUNS = "TAKRES_MAX_ACTIVE_RUNS"

    class Columns:
        """
        Result-file column names.
        Used when building CSV rows and the summary dictionaries.
        """

        # Response attributes
        CODE = "code"
        MSG = "message"

        # Series files
        VALUE = "value"

        # Run tables
        RUN_ID = "run_id"
        NETWORK_ID = "network_id"
        SEQUENCE_ID = "sequence_id"
        NMSE = "nmse"
        DIVERGENT = "divergent"
        BLOWN_UP = "blown_up"

        # Aggregated tables
        MEAN_NMSE = "mean_nmse"
        STD_NMSE = "std_nmse"
        DIVERGENCE_PCT = "divergence_pct"
        MEAN_NODES = "mean_nodes"
        TAU0_NET = "tau0_net"
        TAU_T = "tau_T"
        MU = "mu"
        EPS1 = "eps1"
        EPS2 = "eps2"

        # Embedding tables
        LAG = "lag"
        M = "M"
        FRACTION = "fraction"

        # CCA dump
        NODE_ID = "node_id"
        BEST_LAG = "best_lag"
        CC_MAX = "cc_max"

        # Control tables
        SPIKE_INDEX = "spike_index"
        ISI = "isi"
        NODES = "nodes"
        ARCHITECTURE = "architecture"
        NORMALIZED_MEAN_ISI = "normalized_mean_isi"
        ISI_CV = "isi_cv"
        STABILIZED = "stabilized"

    class Defaults:
        """Numerical defaults (source-study values unless noted)."""

        # Mackey-Glass map
        MG_THETA = 0.2
        MG_NU = 10.0
        MG_PSI = 0.1
        MG_TAU_M = 17.0
        MG_DELTA = 0.1
        MG_SUBSAMPLE = 10
        MG_TRANSIENT = 1000
        MG_HISTORY_LOW = 0.1
        MG_HISTORY_HIGH = 1.3

        # FitzHugh-Nagumo neuron
        FHN_EPSILON = 0.005
        FHN_G = 0.5
        FHN_D = 1.0
        FHN_H = 0.15
        FHN_I = 0.3
        FHN_DT = 0.001
        # xi has standard deviation 0.02 per integration step; as a white-noise
        # intensity that is 0.02 * sqrt(dt)
        FHN_XI_STD = 0.02
        FHN_NOISE_SIGMA = FHN_XI_STD * FHN_DT ** 0.5
        FHN_DIVERGENCE_BOUND = 1e3
        FHN_NOISE_BLOCK = 65536

        # Reservoir
        M_NODES = 1000
        MU = 1.1
        ALPHA = 0.8
        B = 0.2
        WEIGHT_RANGE = 1.0
        SVD_RTOL = 1e-12
        TRAIN_LEN = 3000
        WASHOUT = 1000
        HORIZON = 300
        NMSE_CAP = 1e6

        # Embedding
        FNN_R_TOL = 10.0
        FNN_A_TOL = 2.0
        FNN_FRACTION_THRESHOLD = 0.01
        FNN_M_MAX = 10
        TAU0 = -12
        EMBEDDING_M = 4
        ACF_MAX_LAG = 100

        # Takens analysis
        CCA_MAX_LAG = 60
        WINDOW_DELTA = 3
        WINDOW_M = 4
        TAU0_NET_MIN = -25
        TAU0_NET_MAX = -1

        # Hybrid
        TRRNN_M = 350
        TRRNN_MU = 0.1
        TAU_T = -12

        # Control
        V_THRESHOLD = 0.6
        PULSE_AMPLITUDE = 0.3
        PULSE_WIDTH = 10
        PACING_FRACTION = 0.9
        FIT_WINDOW = 50
        CONTROL_TRAIN_LEN = 100000
        CONTROL_RUN_LEN = 1000000
        CONTROL_TAU_T = -166
        CONTROL_MU_RRNN = 1.1
        CONTROL_MU_TRRNN = 0.1
        RESYNC_EVERY = 1000
        STABILIZED_CV = 0.05

        # Harness
        BASE_SEED = 20190101
        DIVERGENCE_DOMINATED_FRACTION = 0.9

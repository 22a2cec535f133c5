"""Every numeric default in one place.

Values marked (protocol) follow the reference fine-tuning protocol; the rest
are choices made for small MLPs on the synthetic suite.
"""

# suite
NUM_CLASSES = 3  # (protocol) three labels
INPUT_DIM = 16
NUM_SHIFTED_DOMAINS = 14  # (protocol) held-out target domains
SPLIT_COUNTS = (2000, 500, 500)
MAX_SHIFT_ANGLE = 1.3
NOISE_SIGMA = 1.0

# model
HIDDEN_DIMS = (32,)

# training
EPOCHS = 15  # (protocol)
BATCH_SIZE = 32  # (protocol)
FINETUNE_LEARNING_RATE = 2e-5  # (protocol) transformer fine-tuning rate; too small for fresh MLPs
LEARNING_RATE = 1e-2
WEIGHT_DECAY = 0.01
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
SAM_RHO = 0.05
FISHER_LAMBDA = 0.1
CONSISTENCY_LAMBDA = 1.0
VIEW_NOISE_SIGMA = 0.5

# difference sharpness
NOISE_SCALES = (0.001, 0.005, 0.01, 0.02)  # (protocol) candidate noise scales
NOISE_SCALE = 0.01
ASCENT_COEFF = 0.05  # (protocol) n
RADIUS_LAMBDA = 0.05  # (protocol) lambda
SHARPNESS_BATCH_SIZE = 8  # (protocol) batch size of the speed comparison
SHARPNESS_NUM_BATCHES = 1

# alpha sharpness
LOSS_TARGET_OFFSET = 0.1
ASCENT_STEPS = 10
BINARY_SEARCH_ITERS = 20
ALPHA_BOUNDS = (1e-4, 10.0)

# experiment
NUM_SEEDS = 8  # (protocol)
OBJECTIVES = ("baseline", "sam", "fisher", "consistency")

"""Probabilistic residual vector quantization with a Gaussian-mixture latent
code model, plus a deterministic desk-scale training harness and exact
small-instance oracles."""

from .codebook import (
    Codebook,
    QuantizeResult,
    batch_codebook_grad,
    codebook_grad,
    codebook_loss,
    depth_posterior,
    depth_posteriors,
    embed_code,
    init_codebook,
    quantize,
    quantize_batch,
    utilization,
)
from .codec import (
    LinearCodec,
    codec_loss_and_grad,
    commitment_loss,
    decode,
    encode,
    init_codec,
    recon_loss,
)
from .config import PRESETS, RunConfig, build_config
from .ema import EmaCodebook, EmaState, ema_update, init_ema
from .encoder import ContextEncoder, ReferenceEncoder, encode_tokens
from .errors import (
    CapacityError,
    ClamError,
    DataError,
    FileFormatError,
    NumericError,
    UsageError,
)
from .estimators import EmaRVQ, LatentCodeLM, ProbabilisticRVQ
from .fileio import (
    CodeSequence,
    load_checkpoint,
    read_codes,
    read_features,
    save_checkpoint,
    write_codes,
    write_features,
)
from .lm import (
    LatentLm,
    batch_loss,
    code_loglik_diagnostic,
    init_latent_lm,
    lm_train_step,
    sequence_loss,
    stack_embeddings,
)
from .meanfield import (
    JointPosterior,
    coordinate_ascent,
    elbo,
    joint_posterior,
    log_evidence,
    uniform_posterior,
)
from .mixture import (
    LowRankCache,
    eos_loss,
    isotropic_gaussian_kl,
    lowrank_squared_distance,
    mixture_bound_floor,
    mixture_bound_loss,
    mixture_responsibilities,
    project_mean,
    spectral_normalize,
)
from .optim import Adam
from .sampling import GenerationConfig, generate_codes, sample_step, top_p_filter
from .synth import FeatureSequence, SynthConfig, synth_dataset, synth_sequence
from .training import compare_rvq, evaluate, generate, train_lm, train_quantizer

__version__ = "0.1.0"

"""Seeded training runs and experiments: joint quantizer training, latent
code-model training against a frozen quantizer, the probabilistic-vs-EMA
comparison with a shared frozen encoder, evaluation, and generation.

Every run derives all randomness from the config seed through named streams,
accumulates losses in float64 with fixed iteration orders, and writes
deterministic artifacts (metrics CSV, summary JSON, checkpoint). Wall-clock
timings go to a separate file so the deterministic artifacts stay
byte-identical across same-seed runs.
"""

from __future__ import annotations

import hashlib
import json
import os
import time

import numpy as np

from .codebook import (
    Codebook,
    batch_codebook_grad,
    init_codebook,
    quantize_batch,
    utilization,
)
from .codec import LinearCodec, codec_loss_and_grad, decode, frame_windows, init_codec
from .config import RunConfig
from .ema import EmaCodebook, EmaState, ema_update, init_ema
from .encoder import encode_tokens
from .errors import DataError, NumericError, UsageError
from .fileio import CodeSequence, load_checkpoint, save_checkpoint, write_codes, write_features
from .lm import LatentLm, batch_loss, code_loglik_diagnostic, init_latent_lm, lm_train_step
from .optim import Adam
from .sampling import GenerationConfig, generate_codes
from .synth import SynthConfig, sequence_token_string, synth_dataset

# rng stream tags: (seed, tag, ...) so every consumer draws independently
STREAM_TRAIN_DATA = 0
STREAM_EVAL_DATA = 1
STREAM_LM_DATA = 2
STREAM_BATCH = 3
STREAM_INIT = 4
STREAM_DIAG = 5
STREAM_GENERATE = 6


class MetricsWriter:
    """Fixed-header CSV with rows monotone in step."""

    def __init__(self, path: str, columns: list[str]):
        self.path = path
        self.columns = columns
        self._last_step = -1
        self._fh = open(path, "w")
        self._fh.write(",".join(["step"] + columns) + "\n")

    def add(self, step: int, values: dict[str, float]) -> None:
        if step <= self._last_step:
            raise UsageError("metric steps must be strictly increasing")
        self._last_step = step
        cells = [str(step)] + [f"{float(values[c]):.10g}" for c in self.columns]
        self._fh.write(",".join(cells) + "\n")

    def close(self) -> None:
        self._fh.close()


def _synth_config(cfg: RunConfig) -> SynthConfig:
    return SynthConfig(
        n_bins=cfg.n_bins,
        duration=cfg.seq_frames,
        harmonics=cfg.harmonics,
        smoothness=cfg.smoothness,
        noise_level=cfg.noise_level,
        seed=cfg.seed,
        frame_rate=cfg.frame_rate,
    )


def _dataset_frames(cfg: RunConfig, count: int, stream: int) -> np.ndarray:
    """Stacked frames of a seeded dataset, shape (count, seq_frames, n_bins)."""
    seqs = synth_dataset(_synth_config(cfg), count, stream=stream)
    return np.stack([s.frames.astype(np.float64) for s in seqs])


def _check_finite_or_abort(value: float, step: int, batch_idx: np.ndarray, what: str) -> None:
    if not np.isfinite(value):
        raise NumericError(
            f"non-finite {what} at step {step}; offending batch indices "
            f"{batch_idx.tolist()}"
        )


def _depth_quartile_means(values: np.ndarray) -> list[float]:
    groups = np.array_split(np.arange(values.shape[0]), 4)
    return [float(values[g].mean()) if g.size else float("nan") for g in groups]


def quantizer_tensors(cb: Codebook, codec: LinearCodec) -> dict[str, np.ndarray]:
    return {
        "codebook.directions": cb.directions,
        "codebook.log_sigma": np.asarray(cb.log_sigma),
        "codebook.max_scale_logit": np.asarray(cb.max_scale_logit),
        "codebook.scale_logits": cb.scale_logits,
        "codec.dec_bias": codec.dec_bias,
        "codec.dec_weight": codec.dec_weight,
        "codec.enc_bias": codec.enc_bias,
        "codec.enc_weight": codec.enc_weight,
    }


def codebook_from_tensors(tensors: dict[str, np.ndarray]) -> Codebook:
    return Codebook(
        directions=tensors["codebook.directions"],
        scale_logits=tensors["codebook.scale_logits"],
        max_scale_logit=float(tensors["codebook.max_scale_logit"]),
        log_sigma=float(tensors["codebook.log_sigma"]),
    )


def codec_from_tensors(tensors: dict[str, np.ndarray], factor: int, n_bins: int) -> LinearCodec:
    return LinearCodec(
        factor=factor,
        n_bins=n_bins,
        enc_weight=tensors["codec.enc_weight"],
        enc_bias=tensors["codec.enc_bias"],
        dec_weight=tensors["codec.dec_weight"],
        dec_bias=tensors["codec.dec_bias"],
    )


def load_quantizer(path: str) -> tuple[RunConfig, Codebook, LinearCodec, dict]:
    config_echo, tensors, metrics = load_checkpoint(path)
    cfg = RunConfig(**{k: v for k, v in config_echo.items() if k != "kind"}).validate()
    if "codebook.directions" in tensors:
        cb = codebook_from_tensors(tensors)
    elif "codebook.codewords" in tensors:
        cb = EmaCodebook(codewords=tensors["codebook.codewords"])  # type: ignore[assignment]
    else:
        raise DataError("checkpoint has no codebook tensors")
    codec = codec_from_tensors(tensors, cfg.factor, cfg.n_bins)
    return cfg, cb, codec, metrics


def _encode_windows(codec: LinearCodec, windows: np.ndarray) -> np.ndarray:
    """Encoder applied to pre-flattened frame windows, shape (n, win) -> (n, dim)."""
    return windows @ codec.enc_weight.T + codec.enc_bias


def _count_codes(counts: np.ndarray, stacks: np.ndarray) -> None:
    depth, vocab = counts.shape
    flat = (np.arange(depth)[None, :] * vocab + stacks).ravel()
    np.add.at(counts.reshape(-1), flat, 1)


def _codebook_adam_step(cb: Codebook, grad, opt: Adam) -> None:
    params = {
        "directions": cb.directions,
        "log_sigma": np.asarray(cb.log_sigma),
        "max_scale_logit": np.asarray(cb.max_scale_logit),
        "scale_logits": cb.scale_logits,
    }
    opt.step(params, grad.as_dict())
    cb.set_directions(params["directions"])
    cb.scale_logits = params["scale_logits"]
    cb.max_scale_logit = float(params["max_scale_logit"])
    cb.log_sigma = float(params["log_sigma"])


def train_quantizer(cfg: RunConfig, out_dir: str) -> str:
    """Joint desk-scale run: the codebook trains on its posterior-weighted
    Gaussian loss while the encoder/decoder train on reconstruction L1 plus
    the commitment term. Returns the checkpoint path."""
    os.makedirs(out_dir, exist_ok=True)
    frames = _dataset_frames(cfg, cfg.num_sequences, STREAM_TRAIN_DATA)

    cb = init_codebook(cfg.depth, cfg.vocab, cfg.latent_dim, seed=[cfg.seed, STREAM_INIT])
    codec = init_codec(cfg.factor, cfg.n_bins, cfg.latent_dim, seed=cfg.seed)
    opt_cb = Adam(lr=cfg.lr_codebook, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    opt_codec = Adam(lr=cfg.lr_codec, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    batch_rng = np.random.default_rng([cfg.seed, STREAM_BATCH])

    metrics = MetricsWriter(
        os.path.join(out_dir, "metrics.csv"),
        ["codebook_loss", "recon_l1", "commitment", "sigma",
         "usage_q1", "usage_q2", "usage_q3", "usage_q4"],
    )
    timings = open(os.path.join(out_dir, "timings.csv"), "w")
    timings.write("step,wall_time\n")
    t0 = time.monotonic()
    counts = np.zeros((cfg.depth, cfg.vocab))
    last_row: dict[str, float] = {}

    for step in range(1, cfg.steps + 1):
        idx = batch_rng.integers(0, cfg.num_sequences, size=cfg.batch_size)
        batch_frames = frames[idx]
        z = np.concatenate([
            _encode_windows(codec, frame_windows(batch_frames[i], cfg.factor))
            for i in range(len(idx))
        ])
        qr = quantize_batch(cb, z)
        _count_codes(counts, qr.stacks)

        cb_loss, cb_grad = batch_codebook_grad(cb, z, qr.stacks)
        _check_finite_or_abort(cb_loss, step, idx, "codebook loss")
        _codebook_adam_step(cb, cb_grad, opt_cb)

        n_lat = z.shape[0] // len(idx)
        recon_vals, commit_vals = [], []
        codec_grads: dict[str, np.ndarray] | None = None
        for i in range(len(idx)):
            z_hat_i = qr.quantized[i * n_lat:(i + 1) * n_lat]
            losses, grads = codec_loss_and_grad(
                codec, batch_frames[i], z_hat_i,
                lambda_recon=cfg.lambda_recon, lambda_commit=cfg.lambda_commit)
            recon_vals.append(losses.recon)
            commit_vals.append(losses.commitment)
            if codec_grads is None:
                codec_grads = grads
            else:
                for k in codec_grads:
                    codec_grads[k] += grads[k]
        assert codec_grads is not None
        for k in codec_grads:
            codec_grads[k] /= len(idx)
        recon = float(np.mean(recon_vals))
        commit = float(np.mean(commit_vals))
        _check_finite_or_abort(recon + commit, step, idx, "codec loss")
        codec_params = codec.params()
        opt_codec.step(codec_params, codec_grads)
        codec.set_params(codec_params)

        if step % cfg.metric_interval == 0:
            usage, _ = utilization(counts)
            q = _depth_quartile_means(usage)
            last_row = {
                "codebook_loss": cb_loss, "recon_l1": recon, "commitment": commit,
                "sigma": cb.sigma,
                "usage_q1": q[0], "usage_q2": q[1], "usage_q3": q[2], "usage_q4": q[3],
            }
            metrics.add(step, last_row)
            timings.write(f"{step},{time.monotonic() - t0:.3f}\n")
            counts[:] = 0.0

    metrics.close()
    timings.close()
    ckpt_path = os.path.join(out_dir, "model.ckpt")
    config_echo = dict(cfg.to_dict(), kind="quantizer")
    save_checkpoint(ckpt_path, config_echo, quantizer_tensors(cb, codec),
                    metrics={"final": last_row, "steps": cfg.steps})
    summary = {"task": "train-quantizer", "steps": cfg.steps, "final": last_row,
               "checkpoint": os.path.basename(ckpt_path)}
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    return ckpt_path


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _lm_dataset(cfg: RunConfig, cb, codec: LinearCodec,
                count: int, stream: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """(token_ids, ground-truth codes) pairs from the frozen quantizer."""
    frames = _dataset_frames(cfg, count, stream)
    synth_cfg = _synth_config(cfg)
    batch = []
    for i in range(count):
        z = _encode_windows(codec, frame_windows(frames[i], cfg.factor))
        stacks = quantize_batch(cb, z).stacks
        tokens = encode_tokens(sequence_token_string(synth_cfg, stream, i))
        batch.append((tokens, stacks))
    return batch


def lm_tensors(model: LatentLm) -> dict[str, np.ndarray]:
    return {f"lm.{name}": value for name, value in model.parameters().items()}


def lm_from_checkpoint(path: str) -> tuple[RunConfig, LatentLm, dict]:
    config_echo, tensors, metrics = load_checkpoint(path)
    cfg = RunConfig(**{k: v for k, v in config_echo.items() if k != "kind"}).validate()
    model = init_latent_lm(cfg.latent_dim, cfg.mixture_count, cfg.lowrank_dim,
                           window=cfg.window, embed_dim=cfg.embed_dim, seed=cfg.seed,
                           label_smoothing=cfg.label_smoothing,
                           use_spectral_norm=cfg.spectral_norm)
    params = {name[len("lm."):]: value for name, value in tensors.items()
              if name.startswith("lm.")}
    if set(params) != set(model.parameters()):
        raise DataError("checkpoint tensor names do not match the code model")
    model.set_parameters(params)
    return cfg, model, metrics


def train_lm(cfg: RunConfig, quantizer_ckpt: str, out_dir: str) -> str:
    """Teacher-forced training of the latent code model against a frozen
    quantizer checkpoint. Returns the code-model checkpoint path."""
    os.makedirs(out_dir, exist_ok=True)
    q_cfg, cb, codec, _ = load_quantizer(quantizer_ckpt)
    if not isinstance(cb, Codebook):
        raise UsageError("code-model training needs a probabilistic quantizer checkpoint")
    dataset = _lm_dataset(q_cfg, cb, codec, cfg.num_sequences, STREAM_LM_DATA)

    model = init_latent_lm(q_cfg.latent_dim, cfg.mixture_count, cfg.lowrank_dim,
                           window=cfg.window, embed_dim=cfg.embed_dim,
                           seed=cfg.seed, label_smoothing=cfg.label_smoothing,
                           use_spectral_norm=cfg.spectral_norm)
    optimizer = Adam(lr=cfg.lr_lm, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    batch_rng = np.random.default_rng([cfg.seed, STREAM_BATCH])
    diag_rng = np.random.default_rng([cfg.seed, STREAM_DIAG])

    metrics = MetricsWriter(os.path.join(out_dir, "metrics.csv"),
                            ["total", "bound", "eos", "b_diag"])
    timings = open(os.path.join(out_dir, "timings.csv"), "w")
    timings.write("step,wall_time\n")
    t0 = time.monotonic()
    last_row: dict[str, float] = {}

    for step in range(1, cfg.steps + 1):
        if cfg.batch_size >= len(dataset):
            batch = dataset
            idx = np.arange(len(dataset))
        else:
            idx = batch_rng.integers(0, len(dataset), size=cfg.batch_size)
            batch = [dataset[i] for i in idx]
        breakdown = lm_train_step(model, cb, batch, optimizer)
        _check_finite_or_abort(breakdown.total, step, idx, "code-model loss")
        if step % cfg.metric_interval == 0:
            b_diag = code_loglik_diagnostic(cb, batch[0][1], diag_rng)
            last_row = {"total": breakdown.total, "bound": breakdown.bound,
                        "eos": breakdown.eos, "b_diag": b_diag}
            metrics.add(step, last_row)
            timings.write(f"{step},{time.monotonic() - t0:.3f}\n")

    metrics.close()
    timings.close()
    ckpt_path = os.path.join(out_dir, "model.ckpt")
    config_echo = dict(cfg.to_dict(), kind="lm")
    config_echo.update(latent_dim=q_cfg.latent_dim, depth=q_cfg.depth,
                       vocab=q_cfg.vocab, factor=q_cfg.factor, n_bins=q_cfg.n_bins)
    save_checkpoint(ckpt_path, config_echo, lm_tensors(model),
                    metrics={"final": last_row, "steps": cfg.steps,
                             "num_params": model.num_params})
    _write_json(os.path.join(out_dir, "summary.json"),
                {"task": "train-lm", "steps": cfg.steps, "final": last_row,
                 "num_params": model.num_params,
                 "checkpoint": os.path.basename(ckpt_path)})
    return ckpt_path


def _eval_usage(cb, eval_z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    stacks = quantize_batch(cb, eval_z).stacks
    counts = np.zeros((cb.depth, cb.vocab))
    _count_codes(counts, stacks)
    return utilization(counts)


def _eval_recon_l1(cb, codec: LinearCodec, eval_z: np.ndarray,
                   eval_frames: np.ndarray) -> float:
    """Mean L1 over eval sequences, decoding each sequence's quantized latents."""
    n_seq, T, B = eval_frames.shape
    n_lat = eval_z.shape[0] // n_seq
    z_hat = quantize_batch(cb, eval_z).quantized
    total = 0.0
    for i in range(n_seq):
        dec = decode(codec, z_hat[i * n_lat:(i + 1) * n_lat], num_frames=T)
        total += float(np.mean(np.abs(eval_frames[i] - dec.frames.astype(np.float64))))
    return total / n_seq


def compare_rvq(cfg: RunConfig, out_dir: str) -> dict:
    """Head-to-head probabilistic vs EMA quantizer run.

    Both arms see the identical latent stream from one frozen random encoder
    (unless ``compare_joint`` trains per-arm codecs), so codebook dynamics are
    the only difference; stream hashes certify the isolation. Reports
    per-depth usage at five evenly spaced checkpoints plus final eval-set
    reconstruction L1 for each arm.
    """
    os.makedirs(out_dir, exist_ok=True)
    frames = _dataset_frames(cfg, cfg.num_sequences, STREAM_TRAIN_DATA)
    eval_frames = _dataset_frames(cfg, max(cfg.eval_sequences, 1), STREAM_EVAL_DATA)
    windows = np.stack([frame_windows(frames[i], cfg.factor)
                        for i in range(cfg.num_sequences)])
    eval_windows = np.concatenate([frame_windows(eval_frames[i], cfg.factor)
                                   for i in range(eval_frames.shape[0])])

    if cfg.steps == 0:
        checkpoints = [0]
    else:
        checkpoints = sorted({max(1, round(cfg.steps * i / 5)) for i in range(1, 6)})

    init_cb = init_codebook(cfg.depth, cfg.vocab, cfg.latent_dim, seed=[cfg.seed, STREAM_INIT])
    shared_codec = init_codec(cfg.factor, cfg.n_bins, cfg.latent_dim, seed=cfg.seed)

    usage_rows: list[tuple[int, str, int, float, float]] = []
    arm_results: dict[str, dict] = {}

    for arm in ("prob", "ema"):
        cb: Codebook | EmaCodebook
        cb = init_cb.copy()
        if arm == "ema":
            # identical effective embeddings at init, so step-0 usage matches
            ema_cb, ema_state = init_ema(cfg.depth, cfg.vocab, cfg.latent_dim,
                                         codewords=init_cb.embeddings(),
                                         decay=cfg.ema_decay, epsilon=cfg.ema_epsilon)
            cb = ema_cb
        codec = shared_codec.copy()
        opt_cb = Adam(lr=cfg.lr_codebook, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
        opt_codec = Adam(lr=cfg.lr_codec, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
        batch_rng = np.random.default_rng([cfg.seed, STREAM_BATCH])
        stream_hash = hashlib.sha256()

        metrics = MetricsWriter(
            os.path.join(out_dir, f"metrics_{arm}.csv"),
            ["quant_mse", "recon_l1", "usage_q1", "usage_q2", "usage_q3", "usage_q4"])
        counts = np.zeros((cfg.depth, cfg.vocab))

        if 0 in checkpoints:
            usage, pplx = _eval_usage(cb, _encode_windows(codec, eval_windows))
            usage_rows.extend((0, arm, d, usage[d], pplx[d]) for d in range(cfg.depth))

        for step in range(1, cfg.steps + 1):
            idx = batch_rng.integers(0, cfg.num_sequences, size=cfg.batch_size)
            z = _encode_windows(codec, windows[idx].reshape(-1, windows.shape[-1]))
            stream_hash.update(z.tobytes())
            qr = quantize_batch(cb, z)
            _count_codes(counts, qr.stacks)

            if arm == "prob":
                loss, grad = batch_codebook_grad(cb, z, qr.stacks)
                _check_finite_or_abort(loss, step, idx, "codebook loss")
                _codebook_adam_step(cb, grad, opt_cb)
            else:
                ema_update(cb, ema_state, z, qr.stacks)

            # decoder learns reconstruction; encoder stays frozen unless the
            # joint flag asks for full per-arm codec training
            n_lat = z.shape[0] // len(idx)
            recon_vals = []
            codec_grads: dict[str, np.ndarray] | None = None
            for i in range(len(idx)):
                z_hat_i = qr.quantized[i * n_lat:(i + 1) * n_lat]
                losses, grads = codec_loss_and_grad(
                    codec, frames[idx[i]], z_hat_i,
                    lambda_recon=cfg.lambda_recon, lambda_commit=cfg.lambda_commit)
                recon_vals.append(losses.recon)
                if codec_grads is None:
                    codec_grads = grads
                else:
                    for k in codec_grads:
                        codec_grads[k] += grads[k]
            assert codec_grads is not None
            if not cfg.compare_joint:
                codec_grads["enc_weight"] = np.zeros_like(codec.enc_weight)
                codec_grads["enc_bias"] = np.zeros_like(codec.enc_bias)
            for k in codec_grads:
                codec_grads[k] /= len(idx)
            recon = float(np.mean(recon_vals))
            _check_finite_or_abort(recon, step, idx, "reconstruction loss")
            codec_params = codec.params()
            opt_codec.step(codec_params, codec_grads)
            codec.set_params(codec_params)

            if step % cfg.metric_interval == 0:
                usage, _ = utilization(counts)
                q = _depth_quartile_means(usage)
                quant_mse = float(np.mean(qr.residuals[:, -1] ** 2))
                metrics.add(step, {"quant_mse": quant_mse, "recon_l1": recon,
                                   "usage_q1": q[0], "usage_q2": q[1],
                                   "usage_q3": q[2], "usage_q4": q[3]})
                counts[:] = 0.0

            if step in checkpoints:
                usage, pplx = _eval_usage(cb, _encode_windows(codec, eval_windows))
                usage_rows.extend((step, arm, d, usage[d], pplx[d])
                                  for d in range(cfg.depth))

        metrics.close()
        eval_z = _encode_windows(codec, eval_windows)
        usage, pplx = _eval_usage(cb, eval_z)
        final_l1 = _eval_recon_l1(cb, codec, eval_z, eval_frames)
        deep = np.array_split(np.arange(cfg.depth), 4)[-1]
        arm_results[arm] = {
            "final_l1": final_l1,
            "usage_per_depth": usage.tolist(),
            "norm_perplexity_per_depth": pplx.tolist(),
            "deepest_quartile_usage": float(usage[deep].mean()),
            "stream_hash": stream_hash.hexdigest(),
        }
        tensors = (quantizer_tensors(cb, codec) if arm == "prob" else {
            "codebook.codewords": cb.codewords,
            "codec.dec_bias": codec.dec_bias,
            "codec.dec_weight": codec.dec_weight,
            "codec.enc_bias": codec.enc_bias,
            "codec.enc_weight": codec.enc_weight,
            "ema.cluster_size": ema_state.cluster_size,
            "ema.cluster_sum": ema_state.cluster_sum,
        })
        save_checkpoint(os.path.join(out_dir, f"model_{arm}.ckpt"),
                        dict(cfg.to_dict(), kind=f"{arm}-quantizer"), tensors,
                        metrics={"final_l1": arm_results[arm]["final_l1"]})

    with open(os.path.join(out_dir, "compare_usage.csv"), "w") as fh:
        fh.write("step,arm,depth,usage,norm_perplexity\n")
        for step, arm, d, usage_v, pplx_v in usage_rows:
            fh.write(f"{step},{arm},{d},{usage_v:.10g},{pplx_v:.10g}\n")

    hashes_equal = arm_results["prob"]["stream_hash"] == arm_results["ema"]["stream_hash"]
    if not cfg.compare_joint and not hashes_equal:
        raise NumericError("frozen-encoder arms consumed different latent streams")
    summary = {
        "task": "compare-rvq",
        "steps": cfg.steps,
        "seed": cfg.seed,
        "checkpoints": checkpoints,
        "prob": arm_results["prob"],
        "ema": arm_results["ema"],
        "streams_identical": hashes_equal,
        "usage_pass": arm_results["prob"]["deepest_quartile_usage"]
        >= arm_results["ema"]["deepest_quartile_usage"],
        "l1_pass": arm_results["prob"]["final_l1"] <= arm_results["ema"]["final_l1"],
    }
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    return summary


def evaluate(cfg: RunConfig, quantizer_ckpt: str, out_dir: str,
             lm_ckpt: str | None = None) -> dict:
    """Held-out metrics: reconstruction L1/MSE, per-depth utilization, and
    (with a code-model checkpoint) the mean per-step bound loss."""
    os.makedirs(out_dir, exist_ok=True)
    if cfg.eval_sequences < 1:
        raise UsageError("eval needs at least one sequence")
    q_cfg, cb, codec, _ = load_quantizer(quantizer_ckpt)
    eval_frames = _dataset_frames(q_cfg, cfg.eval_sequences, STREAM_EVAL_DATA)
    eval_windows = np.concatenate([frame_windows(eval_frames[i], q_cfg.factor)
                                   for i in range(cfg.eval_sequences)])
    eval_z = _encode_windows(codec, eval_windows)
    qr = quantize_batch(cb, eval_z)
    counts = np.zeros((cb.depth, cb.vocab))
    _count_codes(counts, qr.stacks)
    usage, pplx = utilization(counts)

    n_seq, T, _ = eval_frames.shape
    n_lat = eval_z.shape[0] // n_seq
    l1_total = mse_total = 0.0
    for i in range(n_seq):
        dec = decode(codec, qr.quantized[i * n_lat:(i + 1) * n_lat], num_frames=T)
        diff = eval_frames[i] - dec.frames.astype(np.float64)
        l1_total += float(np.mean(np.abs(diff)))
        mse_total += float(np.mean(diff * diff))

    result = {
        "task": "eval",
        "seed": cfg.seed,
        "eval_sequences": cfg.eval_sequences,
        "recon_l1": l1_total / n_seq,
        "recon_mse": mse_total / n_seq,
        "usage_per_depth": usage.tolist(),
        "norm_perplexity_per_depth": pplx.tolist(),
    }
    if lm_ckpt is not None:
        if not isinstance(cb, Codebook):
            raise UsageError("code-model evaluation needs a probabilistic quantizer")
        lm_cfg, model, _ = lm_from_checkpoint(lm_ckpt)
        dataset = _lm_dataset(q_cfg, cb, codec, lm_cfg.num_sequences, STREAM_LM_DATA)
        breakdown, _, _ = batch_loss(model, cb, dataset)
        result["lm_total"] = breakdown.total
        result["lm_bound"] = breakdown.bound
        result["lm_eos"] = breakdown.eos
    _write_json(os.path.join(out_dir, "summary.json"), result)
    return result


def generate(cfg: RunConfig, lm_ckpt: str, quantizer_ckpt: str, text: str,
             out_dir: str) -> dict:
    """Sample a code sequence for a token string and decode it to features.

    Writes codes.clmc and features.clmf plus a small summary; reaching
    max_steps is a success with stop_reason "max_steps".
    """
    os.makedirs(out_dir, exist_ok=True)
    q_cfg, cb, codec, _ = load_quantizer(quantizer_ckpt)
    if not isinstance(cb, Codebook):
        raise UsageError("generation needs a probabilistic quantizer checkpoint")
    _, model, _ = lm_from_checkpoint(lm_ckpt)
    gen_cfg = GenerationConfig(top_p=cfg.top_p, temperature=cfg.temperature,
                               max_steps=cfg.max_steps, eos_threshold=cfg.eos_threshold)
    rng = np.random.default_rng([cfg.seed, STREAM_GENERATE])
    result = generate_codes(model, cb, encode_tokens(text), gen_cfg, rng)

    codes_path = os.path.join(out_dir, "codes.clmc")
    write_codes(codes_path, CodeSequence(codes=result.codes, vocab=cb.vocab))
    features = decode(codec, result.latents, frame_rate=q_cfg.frame_rate)
    features_path = os.path.join(out_dir, "features.clmf")
    write_features(features_path, features)
    summary = {
        "task": "generate",
        "steps": result.steps,
        "stop_reason": result.stop_reason,
        "codes_file": os.path.basename(codes_path),
        "features_file": os.path.basename(features_path),
    }
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    return summary

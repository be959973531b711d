"""World model composite: frozen codec, hierarchy, transition dynamics.

A WorldModel bundles the observation codec with the learned latent
machinery and exposes a state-space interface that training and
evaluation code share.  Four architectures live behind that interface:

  full                 s -> p -> g hierarchy; phase-valued structure
                       states updated by shift-based path integration
                       g' = g (+) f_fwd(z, g).
  unified_latent_space no structure pathway: the dynamics couple to the
                       Euclidean content code p directly, p' = p +
                       f_fwd(z, p), still shift-structured but unwrapped.
  no_cann_mlp          hierarchy and phases as in full, but the shift
                       update is replaced by a state-to-state network
                       g' = f_fwd(z, g) (output squashed to valid
                       phases); displacements are recovered post hoc.
  encoder_direct       no hierarchy at all: dynamics act on the codec
                       embedding s itself with a state-to-state update.

Checkpoints tag the variant, so a file trained under one architecture
refuses to load into another.  The codec is stored alongside the
learned parts but never trained here; variance/covariance regularizers
are skipped for encoder_direct because its state is the frozen codec
output and cannot respond to them.
"""

import numpy as np

from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint, split_prefix
from .codec import Codec
from .dynamics import (ForwardModel, InverseModel, phase_add, phase_diff,
                       rollout_with)
from .errors import DataFormatError
from .losses import mse, wrapped_mse
from .model import (ModelConfig, make_content_decoder, make_content_encoder,
                    make_structure_decoder, make_structure_encoder)

VARIANTS = ("full", "unified_latent_space", "no_cann_mlp", "encoder_direct")

# stable numeric tags for the checkpoint header; order matches VARIANTS
_VARIANT_CODE = {name: i for i, name in enumerate(VARIANTS)}

_CFG_FIELDS = ("P", "D_s", "D_p", "D_g", "D_z", "spatial_depth",
               "temporal_depth", "heads", "T", "d_model", "dyn_width",
               "f_inv_blocks", "f_fwd_blocks")

CHECKPOINT_VERSION = 1


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class WorldModel:
    """Codec + latent hierarchy + transition dynamics for one variant."""

    def __init__(self, cfg: ModelConfig, codec: Codec, variant: str = "full",
                 seed: int = 0):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; "
                             f"expected one of {VARIANTS}")
        if codec.grid ** 2 != cfg.P:
            raise ValueError(
                f"codec yields {codec.grid ** 2} patches, config wants {cfg.P}"
            )
        if codec.enc_w.shape[1] != cfg.D_s:
            raise ValueError(
                f"codec embedding width {codec.enc_w.shape[1]} != D_s {cfg.D_s}"
            )
        self.cfg = cfg
        self.codec = codec
        self.variant = variant
        self.is_phase = variant in ("full", "no_cann_mlp")
        self.is_shift = variant in ("full", "unified_latent_space")
        self.has_hierarchy = variant != "encoder_direct"
        self.has_structure = variant in ("full", "no_cann_mlp")
        if variant == "encoder_direct":
            self.d_state = cfg.D_s
        elif variant == "unified_latent_space":
            self.d_state = cfg.D_p
        else:
            self.d_state = cfg.D_g

        # one child seed per component slot, independent of which slots a
        # variant actually instantiates, so shared parts init identically
        seeds = np.random.SeedSequence(seed).spawn(6)
        rngs = [np.random.default_rng(s) for s in seeds]
        self.hpc = make_content_encoder(rngs[0], cfg) if self.has_hierarchy else None
        self.mec = make_structure_encoder(rngs[1], cfg) if self.has_structure else None
        self.dec_gp = make_structure_decoder(rngs[2], cfg) if self.has_structure else None
        self.dec_ps = make_content_decoder(rngs[3], cfg) if self.has_hierarchy else None
        self.f_inv = InverseModel(rngs[4], cfg, d_state=self.d_state,
                                  phase=self.is_phase)
        self.f_fwd = ForwardModel(rngs[5], cfg, d_state=self.d_state,
                                  phase=self.is_phase)

    # -- components ----------------------------------------------------------

    def modules(self) -> dict:
        out = {}
        for name in ("hpc", "mec", "dec_gp", "dec_ps", "f_inv", "f_fwd"):
            mod = getattr(self, name)
            if mod is not None:
                out[name] = mod
        return out

    def params_for_stage(self, stage: int) -> list:
        """Trainable parameter list per stage (codec is never included)."""
        if stage == 1:
            names = [n for n in ("hpc", "mec", "dec_gp", "dec_ps")
                     if getattr(self, n) is not None]
        elif stage == 2:
            names = ["f_inv", "f_fwd"]
        elif stage == 3:
            names = list(self.modules())
        else:
            raise ValueError(f"no trainable stage {stage}")
        params = []
        for n in names:
            params.extend(getattr(self, n).params())
        return params

    # -- inference hierarchy -------------------------------------------------

    def encode_frames(self, frames: np.ndarray) -> np.ndarray:
        """(..., T, H, W, C) video -> (..., T, P, D_s) codec embeddings."""
        return self.codec.encode(frames)

    def infer(self, s):
        """Codec embeddings (B, T, P, D_s) -> dict of latent sequences.

        Keys: "p" (content code or None), "g" (structure phases or
        None), "state" (the transition-space sequence: g, p, or s
        itself depending on variant).  Outputs are Tensors on the
        autodiff tape.
        """
        s = _as_tensor(s)
        if self.variant == "encoder_direct":
            return {"p": None, "g": None, "state": s}
        p = self.hpc(s)
        if not self.has_structure:
            return {"p": p, "g": None, "state": p}
        g = self.mec(p)
        return {"p": p, "g": g, "state": g}

    def decode_structure(self, g):
        """g -> reconstructed p (hierarchy variants only)."""
        if self.dec_gp is None:
            raise ValueError(f"variant {self.variant!r} has no structure decoder")
        return self.dec_gp(_as_tensor(g))

    def decode_content(self, p):
        """p -> reconstructed s."""
        if self.dec_ps is None:
            raise ValueError(f"variant {self.variant!r} has no content decoder")
        return self.dec_ps(_as_tensor(p))

    def decode_states(self, state_seq):
        """Transition-space sequence -> codec-embedding sequence."""
        if self.variant == "encoder_direct":
            return _as_tensor(state_seq)
        if self.variant == "unified_latent_space":
            return self.dec_ps(_as_tensor(state_seq))
        return self.dec_ps(self.dec_gp(_as_tensor(state_seq)))

    # -- state algebra -------------------------------------------------------

    def state_diff(self, a, b):
        """a minus b in the variant's state space (wrapped for phases)."""
        if self.is_phase:
            return phase_diff(a, b)
        a, b = _as_tensor(a), _as_tensor(b)
        return a - b

    def state_mse(self, a, b):
        return wrapped_mse(a, b) if self.is_phase else mse(a, b)

    # -- transition dynamics -------------------------------------------------

    def infer_codes(self, state_seq):
        """(B, T, P, D) inferred states -> (B, T-1, P, D_z) z codes."""
        state_seq = _as_tensor(state_seq)
        diffs = self.state_diff(state_seq[:, 1:], state_seq[:, :-1])
        return self.f_inv(diffs)

    def step(self, state, z):
        """One transition: (state, z) -> (next_state, displacement)."""
        state, z = _as_tensor(state), _as_tensor(z)
        if self.is_shift:
            d = self.f_fwd(z, state)
            nxt = phase_add(state, d) if self.is_phase else state + d
            return nxt, d
        nxt = self.f_fwd(z, state)  # state-to-state head
        return nxt, self.state_diff(nxt, state)

    def rollout(self, state1, zs, schedule=(), state_inf=None):
        """Autoregressive generation; see dynamics.rollout_with."""
        return rollout_with(self.step, state1, zs, schedule, state_inf)

    # -- persistence ---------------------------------------------------------

    def state_arrays(self) -> dict:
        arrays = {}
        for prefix, mod in self.modules().items():
            for name, arr in mod.state_arrays().items():
                arrays[f"{prefix}/{name}"] = arr
        for name, arr in self.codec.state_arrays().items():
            arrays[f"codec/{name}"] = arr
        arrays["meta/variant"] = np.array(float(_VARIANT_CODE[self.variant]))
        arrays["meta/version"] = np.array(float(CHECKPOINT_VERSION))
        arrays["meta/config"] = np.array(
            [float(getattr(self.cfg, f)) for f in _CFG_FIELDS])
        return arrays

    def load_state_arrays(self, arrays: dict):
        tag = arrays.get("meta/variant")
        if tag is not None and int(tag) != _VARIANT_CODE[self.variant]:
            found = VARIANTS[int(tag)] if 0 <= int(tag) < len(VARIANTS) \
                else f"code {int(tag)}"
            raise DataFormatError(
                f"checkpoint holds variant {found!r}, model is {self.variant!r}"
            )
        for prefix, mod in self.modules().items():
            sub = split_prefix(arrays, prefix + "/")
            if not sub:
                raise DataFormatError(f"checkpoint missing component {prefix!r}")
            mod.load_state_arrays(sub)
        codec_arrays = split_prefix(arrays, "codec/")
        if codec_arrays:
            self.codec = Codec.from_arrays(codec_arrays)

    def save(self, path):
        save_checkpoint(path, self.state_arrays())


def _config_from_meta(arrays: dict) -> ModelConfig:
    vec = arrays.get("meta/config")
    if vec is None or vec.shape != (len(_CFG_FIELDS),):
        raise DataFormatError("checkpoint lacks a model-config record")
    return ModelConfig(**{f: int(v) for f, v in zip(_CFG_FIELDS, vec)})


def load_world_model(path, expect_variant=None) -> WorldModel:
    """Rebuild a WorldModel from a checkpoint file.

    The stored variant tag decides the architecture; `expect_variant`
    turns a mismatch into an error instead of silently evaluating the
    wrong model family.
    """
    arrays = load_checkpoint(path)
    tag = arrays.get("meta/variant")
    if tag is None:
        raise DataFormatError(f"{path}: not a world-model checkpoint "
                              "(no variant tag)")
    code = int(tag)
    if not 0 <= code < len(VARIANTS):
        raise DataFormatError(f"{path}: unknown variant code {code}")
    variant = VARIANTS[code]
    if expect_variant is not None and variant != expect_variant:
        raise DataFormatError(
            f"{path}: checkpoint holds variant {variant!r}, "
            f"expected {expect_variant!r}"
        )
    cfg = _config_from_meta(arrays)
    codec_arrays = split_prefix(arrays, "codec/")
    if not codec_arrays:
        raise DataFormatError(f"{path}: checkpoint missing codec records")
    model = WorldModel(cfg, Codec.from_arrays(codec_arrays), variant)
    model.load_state_arrays(arrays)
    return model


def load_codec(path) -> Codec:
    """Codec from any checkpoint carrying 'codec/' records.

    Works on both the frame-codec-only artifact and full world-model
    checkpoints, since the codec component is shared by all variants.
    """
    sub = split_prefix(load_checkpoint(path), "codec/")
    if not sub:
        raise DataFormatError(f"{path}: no codec records in checkpoint")
    return Codec.from_arrays(sub)

"""Shared pieces of the two encoder/decoder models: configuration, parameter
bookkeeping, example batching and checkpoint round trips."""
import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import __version__
from .motion import Standardizer
from .nn.checkpoint import CheckpointError, read_archive, validate_parameters, write_archive
from .nn.layers import ParameterSet, gru_param_count, init_gru
from .text import Vocabulary


@dataclass
class ModelConfig:
    encoder_layers: int = 2
    encoder_units: int = 64
    decoder_layers: int = 2
    decoder_units: int = 128
    embedding_dim: int = 64
    dropout: float = 0.4
    learning_rate: float = 1e-3
    gradient_clip: float = math.inf
    batch_size: int = 128
    epochs: int = 100
    vocab_size: int = 1344
    joints: int = 44
    max_motion_length: int = 300
    max_sentence_length: int = 41
    beam_width: int = 5
    layer_norm: bool = False

    def __post_init__(self):
        for name in ("encoder_layers", "encoder_units", "decoder_layers", "decoder_units", "embedding_dim",
                     "batch_size", "vocab_size", "joints", "max_motion_length", "max_sentence_length", "beam_width"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if not self.gradient_clip > 0:
            raise ValueError("gradient_clip must be positive (inf disables)")

    @property
    def context_dim(self):
        return 2 * self.encoder_units

    def to_json(self):
        out = dataclasses.asdict(self)
        return {k: ("inf" if isinstance(v, float) and math.isinf(v) else v) for k, v in out.items()}

    @classmethod
    def from_json(cls, obj):
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - fields
        if unknown:
            raise ValueError(f"unknown {cls.__name__} keys: {', '.join(sorted(unknown))}")
        return cls(**{k: (math.inf if v == "inf" else v) for k, v in obj.items()})


@dataclass
class Example:
    """One (motion, description) pair; ``motion`` is standardized and unpadded."""

    motion: np.ndarray
    indices: np.ndarray
    motion_id: str = ""
    offset: int = 0


class Seq2SeqModel:
    kind = ""
    config_class = ModelConfig

    def __init__(self, config, params=None, seed=0):
        self.config = config
        self.params = params if params is not None else self.init_params(np.random.default_rng([seed, 0]))
        validate_parameters(self.params, self.param_shapes())

    # -- parameters
    def gru_inputs(self):
        """``(prefix, n_in, n_hidden)`` for every recurrent layer, in order."""
        raise NotImplementedError

    def param_shapes(self):
        shapes = {}
        for prefix, n_in, H in self.gru_inputs():
            shapes[f"{prefix}.W"] = (n_in, 3 * H)
            shapes[f"{prefix}.U"] = (H, 3 * H)
            if self.config.layer_norm:
                shapes[f"{prefix}.gain"] = (3 * H,)
                shapes[f"{prefix}.beta"] = (3 * H,)
            else:
                shapes[f"{prefix}.b"] = (3 * H,)
        shapes["embedding"] = (self.config.vocab_size, self.config.embedding_dim)
        shapes["head.W"] = (self.config.decoder_layers * self.config.decoder_units, self.head_size)
        shapes["head.b"] = (self.head_size,)
        return shapes

    def init_params(self, rng):
        cfg = self.config
        params = ParameterSet()
        for prefix, n_in, H in self.gru_inputs():
            init_gru(params, rng, prefix, n_in, H, cfg.layer_norm)
        params["embedding"] = rng.uniform(-0.05, 0.05, size=(cfg.vocab_size, cfg.embedding_dim))
        fan_in = cfg.decoder_layers * cfg.decoder_units
        limit = np.sqrt(6.0 / (fan_in + self.head_size))
        params["head.W"] = rng.uniform(-limit, limit, size=(fan_in, self.head_size))
        params["head.b"] = np.zeros(self.head_size)
        # keep the canonical order of param_shapes()
        return ParameterSet((k, params[k]) for k in self.param_shapes())

    def num_parameters(self):
        return self.params.total()

    def parameter_breakdown(self):
        """Parameter counts per recurrent layer, embedding and output head, plus totals."""
        cfg = self.config
        rows = {}
        for prefix, n_in, H in self.gru_inputs():
            rows[prefix] = gru_param_count(n_in, H, cfg.layer_norm)
        rows["embedding"] = cfg.vocab_size * cfg.embedding_dim
        rows["head"] = (cfg.decoder_layers * cfg.decoder_units + 1) * self.head_size
        recurrent = sum(v for k, v in rows.items() if k not in ("embedding", "head"))
        rows["recurrent_total"] = recurrent
        rows["total"] = recurrent + rows["embedding"] + rows["head"]
        return rows

    # -- inference helpers
    def zero_states(self, n):
        return [np.zeros((n, self.config.decoder_units)) for _ in range(self.config.decoder_layers)]


# ---------------------------------------------------------- checkpoints

def save_model(path, model, *, vocab=None, standardizer=None, joint_names=None, training=None, extra_arrays=None):
    """Write parameters plus everything needed to run or resume the model."""
    manifest = {
        "model_kind": model.kind,
        "config": model.config.to_json(),
        "created_by": f"motionlang {__version__}",
        "vocabulary": vocab.index_to_word if vocab is not None else None,
        "joint_names": list(joint_names) if joint_names is not None else None,
        "standardizer": "tensors:standardizer.mean,standardizer.std" if standardizer is not None else None,
        "training": training or {},
    }
    arrays = dict(model.params)
    if standardizer is not None:
        arrays["standardizer.mean"] = standardizer.mean
        arrays["standardizer.std"] = standardizer.std
    if extra_arrays:
        arrays.update(extra_arrays)
    write_archive(path, manifest, arrays)


@dataclass
class LoadedModel:
    model: Seq2SeqModel
    vocab: Vocabulary
    standardizer: Standardizer
    joint_names: list
    training: dict
    arrays: dict


def load_model(path, expected_kind=None):
    from .l2m import L2MModel
    from .m2l import M2LModel

    manifest, arrays = read_archive(path)
    kind = manifest.get("model_kind")
    classes = {"m2l": M2LModel, "l2m": L2MModel}
    if kind not in classes:
        raise CheckpointError(f"{path}: unknown model kind {kind!r}")
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(f"{path}: expected a {expected_kind} checkpoint, found {kind}")
    cls = classes[kind]
    config = cls.config_class.from_json(manifest["config"])
    shapes = cls(config, params=_placeholder(cls, config)).param_shapes()
    validate_parameters(arrays, shapes)
    params = ParameterSet((k, np.array(arrays[k], dtype=np.float64)) for k in shapes)
    std = None
    if "standardizer.mean" in arrays:
        std = Standardizer(arrays["standardizer.mean"], arrays["standardizer.std"])
    vocab = Vocabulary(manifest["vocabulary"]) if manifest.get("vocabulary") else None
    return LoadedModel(cls(config, params=params), vocab, std, manifest.get("joint_names"),
                       manifest.get("training", {}), arrays)


def _placeholder(cls, config):
    probe = cls.__new__(cls)
    probe.config = config
    return ParameterSet((k, np.zeros(s)) for k, s in probe.param_shapes().items())

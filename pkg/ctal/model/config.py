import dataclasses
from dataclasses import dataclass

from ctal.errors import ConfigError


@dataclass
class ModelConfig:
    """
    :param num_layers: layers per stream (N)
    :param num_heads: attention heads (A)
    :param hidden_size: model width H, shared by both streams
    :param intermediate_size: FFN width, 0 means 4 * hidden_size
    :param vocab_size: BBPE vocabulary size including the 4 specials
    :param audio_feature_dim: width of the acoustic surface features
    :param tie_mlm_head: reuse the token embedding table as the MLM decoder
    """
    num_layers: int = 3
    num_heads: int = 12
    hidden_size: int = 768
    intermediate_size: int = 0
    vocab_size: int = 30004
    max_text_len: int = 512
    max_audio_frames: int = 2048
    audio_feature_dim: int = 160
    dropout: float = 0.1
    layer_norm_eps: float = 1e-5
    init_std: float = 0.02
    tie_mlm_head: bool = False

    def __post_init__(self):
        if self.intermediate_size == 0:
            self.intermediate_size = 4 * self.hidden_size
        if self.num_heads <= 0 or self.hidden_size % self.num_heads != 0:
            raise ConfigError(f"hidden_size {self.hidden_size} is not divisible by num_heads {self.num_heads}")
        if self.num_layers < 0 or self.vocab_size < 0:
            raise ConfigError("num_layers and vocab_size must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def head_size(self):
        return self.hidden_size // self.num_heads

    def to_items(self):
        return [(f.name, getattr(self, f.name)) for f in dataclasses.fields(ModelConfig)]

    @classmethod
    def from_items(cls, items):
        types = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
        kwargs = {}
        for key, value in items:
            if key not in types:
                raise ConfigError(f"unknown model config key {key!r}")
            kwargs[key] = coerce(value, types[key])
        return ModelConfig(**kwargs)


def coerce(value, kind):
    if isinstance(kind, str):
        kind = {"int": int, "float": float, "bool": bool, "str": str}.get(kind, str)
    if not isinstance(value, str):
        return kind(value)
    if kind is bool:
        lowered = value.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    try:
        return kind(value.strip())
    except ValueError as e:
        raise ConfigError(f"cannot read {value!r} as {kind.__name__}") from e


@dataclass
class CtalBaseConfig(ModelConfig):
    num_layers: int = 3


@dataclass
class CtalLargeConfig(ModelConfig):
    num_layers: int = 6


@dataclass
class CtalTinyConfig(ModelConfig):
    num_layers: int = 2
    num_heads: int = 4
    hidden_size: int = 64
    vocab_size: int = 1000
    max_text_len: int = 128
    max_audio_frames: int = 1024

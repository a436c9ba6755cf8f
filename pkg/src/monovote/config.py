"""Line-oriented run configuration: ``section.key = value`` text.

Blank lines and ``#`` comments are skipped.  Values are numbers, the
keyword ``none`` for optional fields, or plain strings.  Unknown keys are
rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .bev_grid import GridConfig
from .errors import ParseError, ValidationError
from .evaluation import EvalConfig
from .neighbor_vote import VoteParams
from .numeric_kernels import LossWeights
from .scene_sim import NoiseConfig, SceneConfig


@dataclass
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    vote: VoteParams = field(default_factory=VoteParams)
    eval: EvalConfig = field(default_factory=EvalConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    scene: SceneConfig = field(default_factory=SceneConfig)
    paths: dict = field(default_factory=dict)
    seed: int = 0


def _float(tok, key, lineno):
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"line {lineno}: key {key} expects a number, got {tok!r}") from None


def _int(tok, key, lineno):
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"line {lineno}: key {key} expects an integer, got {tok!r}") from None


def _opt(converter):
    def convert(tok, key, lineno):
        if tok.lower() in ("none", "off"):
            return None
        return converter(tok, key, lineno)
    return convert

_GRID_FIELDS = {
    "x_min": _float, "x_max": _float, "z_min": _float, "z_max": _float,
    "y_min": _float, "y_max": _float, "cell_x": _float, "cell_z": _float,
    "max_points_per_pillar": _int, "downsample_rate": _int,
    "n_x_override": _opt(_int), "n_z_override": _opt(_int),
}
_VOTE_FIELDS = {
    "r_valid": _opt(_float), "r_voter": _float, "r_assign": _float,
    "tau": _float, "nms_iou": _opt(_float),
}
_EVAL_FIELDS = {
    "iou_threshold": _float, "recall_points": _int,
    "difficulty": lambda tok, key, lineno: tok,
}
_NOISE_FIELDS = {
    "sigma0": _float, "sigma1": _float, "p_edge": _float, "tail_length": _float,
    "slice_step": _float, "fp_rate": _float, "det_jitter": _float,
}
_LOSS_FIELDS = {
    "lambda_det": _float, "lambda_nv": _float, "alpha": _float, "beta": _float,
    "gamma": _float, "w_dist": _float, "w_ang": _float,
    "focal_alpha": _float, "focal_gamma": _float,
}


def _scene_setter(values, key, tok, lineno):
    pair_slots = {
        "n_min": ("n_objects", 0, _int), "n_max": ("n_objects", 1, _int),
        "x_min": ("region", 0, _float), "x_max": ("region", 1, _float),
        "z_min": ("region", 2, _float), "z_max": ("region", 3, _float),
        "length_min": ("length_range", 0, _float), "length_max": ("length_range", 1, _float),
        "width_min": ("width_range", 0, _float), "width_max": ("width_range", 1, _float),
    }
    scalars = {"min_separation": _float, "points_per_car": _int, "seed": _int}
    if key in pair_slots:
        name, idx, conv = pair_slots[key]
        slot = list(values.get(name, _SCENE_TUPLE_DEFAULTS[name]))
        slot[idx] = conv(tok, f"scene.{key}", lineno)
        values[name] = tuple(slot)
    elif key in scalars:
        values[key] = scalars[key](tok, f"scene.{key}", lineno)
    else:
        raise ValidationError(f"line {lineno}: unknown config key scene.{key}")

_SCENE_TUPLE_DEFAULTS = {
    "n_objects": SceneConfig().n_objects,
    "region": SceneConfig().region,
    "length_range": SceneConfig().length_range,
    "width_range": SceneConfig().width_range,
}

_SECTIONS = {
    "grid": (_GRID_FIELDS, GridConfig),
    "vote": (_VOTE_FIELDS, VoteParams),
    "eval": (_EVAL_FIELDS, EvalConfig),
    "noise": (_NOISE_FIELDS, NoiseConfig),
    "loss": (_LOSS_FIELDS, LossWeights),
}


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines into a validated RunConfig."""
    section_values: dict = {name: {} for name in _SECTIONS}
    scene_values: dict = {}
    paths: dict = {}
    seed = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key == "seed":
            seed = _int(value, "seed", lineno)
            continue
        if "." not in key:
            raise ValidationError(f"line {lineno}: unknown config key {key!r}")
        section, _, name = key.partition(".")
        if section == "paths":
            paths[name] = value
            continue
        if section == "scene":
            _scene_setter(scene_values, name, value, lineno)
            continue
        if section not in _SECTIONS:
            raise ValidationError(f"line {lineno}: unknown config section {section!r}")
        table, _cls = _SECTIONS[section]
        if name not in table:
            raise ValidationError(f"line {lineno}: unknown config key {key!r}")
        section_values[section][name] = table[name](value, key, lineno)
    return RunConfig(
        grid=GridConfig(**section_values["grid"]),
        vote=VoteParams(**section_values["vote"]),
        eval=EvalConfig(**section_values["eval"]),
        noise=NoiseConfig(**section_values["noise"]),
        loss=LossWeights(**section_values["loss"]),
        scene=SceneConfig(**scene_values),
        paths=paths,
        seed=seed,
    )


def default_config_text() -> str:
    """Render every recognized key with its default value."""
    cfg = RunConfig()

    def fmt(v):
        if v is None:
            return "none"
        return f"{v:g}" if isinstance(v, float) else str(v)

    lines = [f"seed = {cfg.seed}", ""]
    for section, obj in (("grid", cfg.grid), ("vote", cfg.vote), ("eval", cfg.eval),
                         ("noise", cfg.noise), ("loss", cfg.loss)):
        for f in fields(obj):
            lines.append(f"{section}.{f.name} = {fmt(getattr(obj, f.name))}")
        lines.append("")
    sc = cfg.scene
    lines += [
        f"scene.n_min = {sc.n_objects[0]}", f"scene.n_max = {sc.n_objects[1]}",
        f"scene.x_min = {fmt(sc.region[0])}", f"scene.x_max = {fmt(sc.region[1])}",
        f"scene.z_min = {fmt(sc.region[2])}", f"scene.z_max = {fmt(sc.region[3])}",
        f"scene.length_min = {fmt(sc.length_range[0])}", f"scene.length_max = {fmt(sc.length_range[1])}",
        f"scene.width_min = {fmt(sc.width_range[0])}", f"scene.width_max = {fmt(sc.width_range[1])}",
        f"scene.min_separation = {fmt(sc.min_separation)}",
        f"scene.points_per_car = {sc.points_per_car}",
    ]
    return "\n".join(lines) + "\n"

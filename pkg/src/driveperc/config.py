"""INI-style run configuration with a fixed, validated schema.

Four sections: ``[pipeline]`` (lane detection), ``[train]``, ``[augment]``
and ``[data]``.  Unknown sections or keys are rejected.  Values resolve as
built-in defaults < config file < explicit overrides; training values left
at ``auto`` take the per-task defaults of :data:`TASK_DEFAULTS`.
"""

import configparser
import math

from .errors import ParameterError
from .imaging import GaussianKernelSpec
from .lanes import DEFAULT_ROI, PipelineConfig
from .datasets import AugmentConfig

AUTO = "auto"

# epochs, batch size, learning rate, optimizer per training task
TASK_DEFAULTS = {
    "signs": {"epochs": 20, "batch": 64, "lr": 0.001, "optimizer": "adam"},
    "vehicles": {"epochs": 20, "batch": 64, "lr": 0.001, "optimizer": "adam"},
    "clone": {"epochs": 50, "batch": 64, "lr": 0.001, "optimizer": "adam"},
    "segment": {"epochs": 20, "batch": 8, "lr": 0.001, "optimizer": "adam"},
}


def _roi_text(points):
    return "; ".join(f"{x:g},{y:g}" for x, y in points)


def _parse_roi(text):
    try:
        pts = tuple(tuple(float(v) for v in p.split(",")) for p in text.split(";") if p.strip())
    except ValueError:
        raise ParameterError(f"bad roi {text!r}; expected 'x,y; x,y; ...' fractions") from None
    if len(pts) < 3 or any(len(p) != 2 for p in pts):
        raise ParameterError(f"bad roi {text!r}; need at least three x,y pairs")
    return pts


def _parse_rgb(text):
    if text.strip().lower() == "none":
        return None
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        vals = ()
    if len(vals) != 3 or not all(0 <= v <= 255 for v in vals):
        raise ParameterError(f"bad color threshold {text!r}; expected 'r,g,b' or 'none'")
    return vals


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ParameterError(f"bad boolean {text!r}")


def _auto(parse):
    def inner(text):
        return AUTO if text.strip().lower() == AUTO else parse(text)

    return inner


def _choice(*options):
    def inner(text):
        if text not in options:
            raise ParameterError(f"{text!r} is not one of {', '.join(options)}")
        return text

    return inner


def _fmt(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple) and value and isinstance(value[0], tuple):
        return _roi_text(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_P = PipelineConfig()
_A = AugmentConfig()

# section -> key -> (parser, default)
SCHEMA = {
    "pipeline": {
        "blur_size": (int, _P.blur.size),
        "blur_sigma": (float, _P.blur.sigma),
        "canny_low": (float, _P.canny_low),
        "canny_high": (float, _P.canny_high),
        "roi": (_parse_roi, DEFAULT_ROI),
        "r_res": (float, _P.r_res),
        "theta_res_deg": (float, math.degrees(_P.theta_res)),
        "hough_threshold": (int, _P.hough_threshold),
        "slope_min": (float, _P.slope_min),
        "side_vote_fraction": (float, _P.side_vote_fraction),
        "extent": (float, _P.extent),
        "thickness": (int, _P.thickness),
        "color_threshold": (_parse_rgb, None),
    },
    "train": {
        "epochs": (_auto(int), AUTO),
        "batch": (_auto(int), AUTO),
        "lr": (_auto(float), AUTO),
        "optimizer": (_auto(_choice("sgd", "rmsprop", "adam")), AUTO),
        "beta": (float, 0.9),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "eps": (float, 1e-8),
    },
    "augment": {
        "enabled": (_parse_bool, False),
        "flip_prob": (float, _A.flip_prob),
        "shear": (float, _A.shear),
        "zoom": (float, _A.zoom),
        "crop_top": (float, _A.crop[0]),
        "crop_bottom": (float, _A.crop[1]),
        "blur_size": (int, _A.blur.size),
        "blur_sigma": (float, _A.blur.sigma),
        "target_height": (int, _A.target[0]),
        "target_width": (int, _A.target[1]),
        "side_correction": (float, _A.side_correction),
    },
    "data": {
        "cameras": (_choice("center", "all"), "center"),
        "classes": (int, 43),
        "mask_threshold": (int, 128),
        "report_format": (_choice("text", "csv"), "text"),
    },
}


class Config:
    """Resolved configuration values, ``config[section][key]``."""

    def __init__(self):
        self.values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}

    def __getitem__(self, section):
        return self.values[section]

    def set(self, section, key, text):
        """Parse and store one textual value, validating section and key."""
        if section not in SCHEMA:
            raise ParameterError(f"unknown config section [{section}]")
        if key not in SCHEMA[section]:
            raise ParameterError(f"unknown key {key!r} in [{section}]")
        parse = SCHEMA[section][key][0]
        try:
            self.values[section][key] = parse(text.strip())
        except ValueError as exc:
            raise ParameterError(f"[{section}] {key}: {exc}") from None

    def read_text(self, text, source="<config>"):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ParameterError(f"cannot parse {source}: {exc}") from None
        for section in parser.sections():
            for key, value in parser.items(section):
                self.set(section, key, value)
        self.validate()
        return self

    def read(self, path):
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ParameterError(f"cannot read config {path}: {exc}") from None
        return self.read_text(text, source=path)

    def resolve_task(self, task):
        """Fill ``auto`` training values from the task defaults."""
        for key, value in TASK_DEFAULTS[task].items():
            if self.values["train"][key] == AUTO:
                self.values["train"][key] = value
        return self

    def dump(self):
        out = []
        for section, keys in SCHEMA.items():
            out.append(f"[{section}]")
            out += [f"{k} = {_fmt(self.values[section][k])}" for k in keys]
            out.append("")
        return "\n".join(out)

    def validate(self):
        self.pipeline()
        self.augment()
        t = self.values["train"]
        for key in ("epochs", "batch"):
            if t[key] != AUTO and t[key] < 1:
                raise ParameterError(f"[train] {key} must be positive")
        if t["lr"] != AUTO and t["lr"] < 0:
            raise ParameterError("[train] lr must be non-negative")
        if self.values["data"]["classes"] < 1:
            raise ParameterError("[data] classes must be positive")
        return self

    def pipeline(self):
        p = self.values["pipeline"]
        return PipelineConfig(
            blur=GaussianKernelSpec(p["blur_size"], p["blur_sigma"]),
            canny_low=p["canny_low"],
            canny_high=p["canny_high"],
            roi=p["roi"],
            r_res=p["r_res"],
            theta_res=math.radians(p["theta_res_deg"]),
            hough_threshold=p["hough_threshold"],
            slope_min=p["slope_min"],
            side_vote_fraction=p["side_vote_fraction"],
            extent=p["extent"],
            thickness=p["thickness"],
            color_threshold=p["color_threshold"],
        ).validate()

    def augment(self):
        a = self.values["augment"]
        return AugmentConfig(
            flip_prob=a["flip_prob"],
            shear=a["shear"],
            zoom=a["zoom"],
            crop=(a["crop_top"], a["crop_bottom"]),
            blur=GaussianKernelSpec(a["blur_size"], a["blur_sigma"]),
            target=(a["target_height"], a["target_width"]),
            side_correction=a["side_correction"],
        )

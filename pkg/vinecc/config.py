"""
Configuration management for vinecc.

Handles loading, merging and validating run settings.
Settings files are YAML, or JSON when the suffix is .json;
values from the file are deep-merged onto the defaults and command-line
flags override both.
"""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml

from vinecc import constants
from vinecc.errors import ArgumentError, FormatError

logger = logging.getLogger(__name__)


def get_default_settings() -> Dict[str, Any]:
    """
    Get default run settings.

    Returns:
        Dictionary containing all default settings
    """
    return {
        "version": 1,
        "annotations": {
            "rasterize": "lazy",     # "lazy" or "eager" polygon rasterization
        },
        "raster": {
            "tau": constants.DEFAULT_TAU,
            "top_k": constants.DEFAULT_TOP_K,
            "upsample_factor": constants.DEFAULT_UPSAMPLE_FACTOR,
            "window": constants.DEFAULT_NMS_WINDOW,
        },
        "maskops": {
            "iqr_multiplier": constants.DEFAULT_IQR_MULTIPLIER,
            "percentile_method": constants.DEFAULT_PERCENTILE_METHOD,
            "epsilon": constants.DEFAULT_LOG_EPSILON,
            "scope": "image",        # "image" or "cluster"
        },
        "closure": {
            "mode": "clipped",
            "aggregate": "cluster_mean",
        },
        "regression": {
            "fraction_p": constants.DEFAULT_FRACTION_P,
            "max_iterations": constants.LM_MAX_ITERATIONS,
            "input_mode": "points",  # "points" or "means"
        },
        "metrics": {
            "max_detections": None,  # None = no per-image cap
            "miou_score": 0.5,
        },
        "runtime": {
            "jobs": 1,
            "seed": 0,
        },
    }


def _deep_merge(base: Dict, override: Dict) -> Dict:
    """
    Deep merge two dictionaries.

    Values from override take precedence. Nested dicts are merged recursively.

    Args:
        base: Base dictionary
        override: Dictionary with values to override

    Returns:
        Merged dictionary
    """
    result = base.copy()
    for key, value in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = _deep_merge(result[key], value)
        else:
            result[key] = value
    return result


def load_settings(path: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """
    Load settings from a YAML or JSON file.

    A missing path or an empty file yields the defaults. Partial settings
    are merged with defaults.

    Args:
        path: Path to settings file. If None, defaults are returned.

    Returns:
        Dictionary containing all settings

    Raises:
        FormatError: If the file exists but cannot be parsed
    """
    defaults = get_default_settings()
    if path is None:
        return defaults

    path = Path(path)
    if not path.exists():
        raise FormatError(f"Config file not found: {path}")

    content = path.read_text(encoding="utf-8")
    if not content.strip():
        return defaults

    try:
        if path.suffix.lower() == ".json":
            loaded = json.loads(content)
        else:
            loaded = yaml.safe_load(content)
    except json.JSONDecodeError as e:
        raise FormatError(f"Cannot parse config {path}: {e.msg}", offset=e.pos)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise FormatError(
            f"Cannot parse config {path}: {e}",
            offset=mark.index if mark is not None else None,
        )

    if loaded is None:
        return defaults
    if not isinstance(loaded, dict):
        raise FormatError(f"Config {path} must contain a mapping at top level")

    logger.debug(f"Loaded settings from {path}")
    return _deep_merge(defaults, loaded)


def save_settings(settings: Dict[str, Any], path: Union[str, Path]) -> None:
    """
    Save settings to file, as JSON for a .json suffix and YAML otherwise.

    Creates parent directories if they don't exist.

    Args:
        settings: Dictionary of settings to save
        path: Destination path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    with open(path, "w", encoding="utf-8") as f:
        if path.suffix.lower() == ".json":
            json.dump(settings, f, indent=2, sort_keys=True)
            f.write("\n")
        else:
            yaml.dump(settings, f, default_flow_style=False, allow_unicode=True)


@dataclass(frozen=True)
class RunConfig:
    """Flattened, validated view of the settings used by one run."""
    tau: float = constants.DEFAULT_TAU
    top_k: int = constants.DEFAULT_TOP_K
    upsample_factor: int = constants.DEFAULT_UPSAMPLE_FACTOR
    window: int = constants.DEFAULT_NMS_WINDOW
    iqr_multiplier: float = constants.DEFAULT_IQR_MULTIPLIER
    percentile_method: str = constants.DEFAULT_PERCENTILE_METHOD
    epsilon: float = constants.DEFAULT_LOG_EPSILON
    iqr_scope: str = "image"
    closure_mode: str = "clipped"
    closure_aggregate: str = "cluster_mean"
    fraction_p: float = constants.DEFAULT_FRACTION_P
    max_iterations: int = constants.LM_MAX_ITERATIONS
    regression_input: str = "points"
    max_detections: Optional[int] = None
    miou_score: float = 0.5
    rasterize: str = "lazy"
    jobs: int = 1
    seed: int = 0

    @classmethod
    def from_settings(cls, settings: Dict[str, Any]) -> "RunConfig":
        """
        Build a RunConfig from a (merged) settings dictionary.

        Args:
            settings: Nested settings as returned by load_settings

        Returns:
            Validated RunConfig

        Raises:
            FormatError: If a value has the wrong type for its field
            ArgumentError: If a value is out of range
        """
        s = _deep_merge(get_default_settings(), settings)
        try:
            config = cls(
                tau=float(s["raster"]["tau"]),
                top_k=int(s["raster"]["top_k"]),
                upsample_factor=int(s["raster"]["upsample_factor"]),
                window=int(s["raster"]["window"]),
                iqr_multiplier=float(s["maskops"]["iqr_multiplier"]),
                percentile_method=str(s["maskops"]["percentile_method"]),
                epsilon=float(s["maskops"]["epsilon"]),
                iqr_scope=str(s["maskops"]["scope"]),
                closure_mode=str(s["closure"]["mode"]),
                closure_aggregate=str(s["closure"]["aggregate"]),
                fraction_p=float(s["regression"]["fraction_p"]),
                max_iterations=int(s["regression"]["max_iterations"]),
                regression_input=str(s["regression"]["input_mode"]),
                max_detections=(
                    None if s["metrics"]["max_detections"] is None
                    else int(s["metrics"]["max_detections"])
                ),
                miou_score=float(s["metrics"]["miou_score"]),
                rasterize=str(s["annotations"]["rasterize"]),
                jobs=int(s["runtime"]["jobs"]),
                seed=int(s["runtime"]["seed"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"Invalid settings value: {e}") from e
        config.validate()
        return config

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """
        Return a copy with non-None overrides applied (CLI flags win).

        Args:
            **overrides: Field values; None means "not given"

        Returns:
            Validated RunConfig
        """
        values = self.to_dict()
        for key, value in overrides.items():
            if key not in values:
                raise ArgumentError(f"Unknown config field: {key}")
            if value is not None:
                values[key] = value
        config = RunConfig(**values)
        config.validate()
        return config

    def to_dict(self) -> Dict[str, Any]:
        """Serialize to a flat dictionary."""
        return asdict(self)

    def validate(self) -> None:
        """
        Check every field against its permitted range.

        Raises:
            ArgumentError: On the first invalid field
        """
        if not 0.0 <= self.tau < 1.0:
            raise ArgumentError(f"tau must be in [0, 1), got {self.tau}")
        if self.top_k < 1:
            raise ArgumentError(f"top_k must be >= 1, got {self.top_k}")
        if self.upsample_factor < 1:
            raise ArgumentError(f"upsample_factor must be >= 1, got {self.upsample_factor}")
        if self.window < 1 or self.window % 2 == 0:
            raise ArgumentError(f"window must be a positive odd integer, got {self.window}")
        if self.iqr_multiplier < 0:
            raise ArgumentError(f"iqr_multiplier must be >= 0, got {self.iqr_multiplier}")
        if self.percentile_method not in constants.PERCENTILE_METHODS:
            raise ArgumentError(f"Unknown percentile method {self.percentile_method!r}")
        if self.iqr_scope not in ("image", "cluster"):
            raise ArgumentError(f"iqr scope must be 'image' or 'cluster', got {self.iqr_scope!r}")
        if self.closure_mode not in constants.CLOSURE_MODES:
            raise ArgumentError(f"closure mode must be one of {constants.CLOSURE_MODES}")
        if self.closure_aggregate not in constants.CLOSURE_AGGREGATES:
            raise ArgumentError(f"closure aggregate must be one of {constants.CLOSURE_AGGREGATES}")
        if not 0.0 < self.fraction_p < 1.0:
            raise ArgumentError(f"fraction_p must be in (0, 1), got {self.fraction_p}")
        if self.max_iterations < 1:
            raise ArgumentError("max_iterations must be >= 1")
        if self.regression_input not in ("points", "means"):
            raise ArgumentError("regression input mode must be 'points' or 'means'")
        if self.max_detections is not None and self.max_detections < 1:
            raise ArgumentError("max_detections must be >= 1 when set")
        if self.rasterize not in ("lazy", "eager"):
            raise ArgumentError("rasterize must be 'lazy' or 'eager'")
        if self.jobs < 1:
            raise ArgumentError(f"jobs must be >= 1, got {self.jobs}")

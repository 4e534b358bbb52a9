"""Run configuration: a single JSON document, overridable leaf by leaf.

The document carries the physical state, the diffusion model, detector
parameters for both imaging configurations, the tau schedule, the master
seed and analysis options.  Command-line flags override leaves through
dotted paths (``state.sigma_minus=0.3``).  Two example configurations ship
with the package: ``table1-demo`` (the reference calibration) and
``separable-demo`` (the sigma_plus = sigma_minus null case); a ``--config``
value that is not an existing file resolves against those.
"""

from __future__ import annotations

import importlib.resources
import json
from dataclasses import dataclass, replace

from . import model, simulate
from .errors import ConfigError

CONFIG_SCHEMA_VERSION = 1
EXAMPLE_CONFIGS = ("table1-demo", "separable-demo")


@dataclass(frozen=True)
class RunConfig:
    state: model.EprGaussianState
    diffusion: model.DiffusionModel
    detector_near: simulate.DetectorConfig
    detector_far: simulate.DetectorConfig
    active_basis: model.Basis
    schedule: tuple[tuple[float, int], ...]
    seed: int
    bins: int | None
    shift: int
    pixel_correction: bool
    out_dir: str

    @property
    def detector(self):
        """Detector configuration for the active basis."""
        if self.active_basis is model.Basis.NEAR_FIELD:
            return self.detector_near
        return self.detector_far

    def with_basis(self, basis):
        return replace(self, active_basis=basis)


def _get(doc, path, required=True, default=None):
    node = doc
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            if required:
                raise ConfigError(path, "missing required field")
            return default
        node = node[part]
    return node


def _number(doc, path, required=True, default=None):
    v = _get(doc, path, required, default)
    if v is default and not required:
        return default
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ConfigError(path, f"expected a number, got {v!r}")
    return float(v)


def _roi(doc, path):
    d = _get(doc, path)
    try:
        return simulate.Roi.from_json_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(path, f"bad ROI: {exc}") from None


def _detector_for(doc, state, diffusion, basis):
    key = basis.value
    geo = f"detector.{key}"
    pitch = _number(doc, f"{geo}.pixel_pitch")
    roi_shared = _get(doc, f"{geo}.roi", required=False)
    if roi_shared is not None:
        roi_s = roi_as = _roi(doc, f"{geo}.roi")
    else:
        roi_s = _roi(doc, f"{geo}.roi_stokes")
        roi_as = _roi(doc, f"{geo}.roi_anti_stokes")
    mode_count = _get(doc, "detector.mode_count", required=False)
    if mode_count is None:
        # one mode per entangled dimension at zero delay
        mode_count = max(1, round(model.entanglement_dimension(state, diffusion, 0.0)))
    elif not isinstance(mode_count, int) or isinstance(mode_count, bool):
        raise ConfigError("detector.mode_count", f"expected an integer, got {mode_count!r}")
    try:
        return simulate.DetectorConfig(
            basis=basis,
            pixel_pitch=pitch,
            roi_stokes=roi_s,
            roi_anti_stokes=roi_as,
            eff_photon=_number(doc, "detector.eff_photon"),
            eff_spinwave_readout=_number(doc, "detector.eff_spinwave_readout"),
            dark_rate=_number(doc, "detector.dark_rate"),
            pairs_per_mode=_number(doc, "detector.pairs_per_mode"),
            mode_count=mode_count,
        )
    except ValueError as exc:
        raise ConfigError("detector", str(exc)) from None


def build_config(doc) -> RunConfig:
    """Validate a parsed JSON document into a RunConfig; error messages
    carry the dotted path of the offending field."""
    version = _get(doc, "schema_version")
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError("schema_version", f"expected {CONFIG_SCHEMA_VERSION}, got {version!r}")

    try:
        state = model.EprGaussianState(
            epsilon=_number(doc, "state.epsilon", required=False, default=1.0),
            sigma_minus=_number(doc, "state.sigma_minus"),
            sigma_plus=_number(doc, "state.sigma_plus"),
        )
    except ValueError as exc:
        raise ConfigError("state", str(exc)) from None
    try:
        diffusion = model.DiffusionModel(
            diffusion_coefficient=_number(doc, "diffusion.coefficient"),
            readout_time=_number(doc, "diffusion.readout_time", required=False, default=0.0),
        )
    except ValueError as exc:
        raise ConfigError("diffusion", str(exc)) from None

    basis_token = _get(doc, "detector.basis")
    try:
        basis = model.Basis(basis_token)
    except ValueError:
        raise ConfigError("detector.basis",
                          f"expected near_field or far_field, got {basis_token!r}") from None

    detector_near = _detector_for(doc, state, diffusion, model.Basis.NEAR_FIELD)
    detector_far = _detector_for(doc, state, diffusion, model.Basis.FAR_FIELD)

    raw_schedule = _get(doc, "schedule")
    if not isinstance(raw_schedule, list) or not raw_schedule:
        raise ConfigError("schedule", "expected a non-empty list")
    schedule = []
    for i, entry in enumerate(raw_schedule):
        tau = _number(entry, "tau") if isinstance(entry, dict) else None
        if tau is None or tau < 0:
            raise ConfigError(f"schedule[{i}].tau", "expected a number >= 0")
        frames = _get(entry, "frames")
        if not isinstance(frames, int) or isinstance(frames, bool) or frames <= 0:
            raise ConfigError(f"schedule[{i}].frames", "expected a positive integer")
        schedule.append((tau, frames))

    seed = _get(doc, "seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed", f"expected a non-negative integer, got {seed!r}")

    bins = _get(doc, "analysis.bins", required=False)
    if bins is not None and (not isinstance(bins, int) or isinstance(bins, bool) or bins < 6):
        raise ConfigError("analysis.bins", f"expected an integer >= 6 or null, got {bins!r}")
    shift = _get(doc, "analysis.shift", required=False, default=1)
    if not isinstance(shift, int) or isinstance(shift, bool) or shift < 1:
        raise ConfigError("analysis.shift", f"expected a positive integer, got {shift!r}")
    pixel_correction = _get(doc, "analysis.pixel_correction", required=False, default=True)
    if not isinstance(pixel_correction, bool):
        raise ConfigError("analysis.pixel_correction", "expected true or false")

    out_dir = _get(doc, "output.dir", required=False, default="eprsim-out")
    if not isinstance(out_dir, str) or not out_dir:
        raise ConfigError("output.dir", "expected a non-empty string")

    return RunConfig(state=state, diffusion=diffusion,
                     detector_near=detector_near, detector_far=detector_far,
                     active_basis=basis, schedule=tuple(schedule), seed=seed,
                     bins=bins, shift=shift, pixel_correction=pixel_correction,
                     out_dir=out_dir)


def example_config_text(name):
    """Raw JSON text of a packaged example configuration."""
    if name not in EXAMPLE_CONFIGS:
        raise ConfigError("config", f"unknown example config {name!r}")
    return (importlib.resources.files("eprsim.data") / f"{name}.json").read_text()


def load_config_document(path_or_name):
    """Load a JSON config document from a file path, falling back to the
    packaged example configs for bare names like ``table1-demo``."""
    import os

    if os.path.exists(path_or_name):
        with open(path_or_name, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        stem = os.path.basename(str(path_or_name))
        if stem.endswith(".json"):
            stem = stem[:-5]
        if stem in EXAMPLE_CONFIGS and os.path.basename(str(path_or_name)) == str(path_or_name):
            text = example_config_text(stem)
        else:
            raise ConfigError("config", f"config file not found: {path_or_name}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from None


def parse_override_value(text):
    """Parse an override value: JSON literal if possible, else a string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(doc, dotted, value):
    """Set a leaf of the raw document through a dotted path, creating
    intermediate objects as needed."""
    parts = dotted.split(".")
    node = doc
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            node[part] = {}
        node = node[part]
    node[parts[-1]] = value


def load_config(path_or_name, overrides=()):
    """Load, override and validate a configuration in one step.

    ``overrides`` is an iterable of ``dotted.path=value`` strings.
    """
    doc = load_config_document(path_or_name)
    for item in overrides:
        if "=" not in item:
            raise ConfigError("set", f"override must look like path=value, got {item!r}")
        dotted, _, raw = item.partition("=")
        apply_override(doc, dotted.strip(), parse_override_value(raw))
    return build_config(doc)

"""Experiment configuration: plain-text key-value sections, validated upfront.

The format is INI-style (configparser):  sections [model], [regions], [flow],
[eikonal], [transport], [spectral], [output]; every key has a default, so an
empty file is a valid configuration.  `--set section.key=value` overrides are
applied on top of the file before validation.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .model import LadderSpec, MetricFamily, family_from_name

DEFAULT_CONFIG = """
[model]
family = radial
c = 1.0
kappa = 0.0
n = 2

[regions]
R = 6.0
w = 0.1
eps_area = 0.05
r_ratio = 1.12
shrink = 0.75
omega_lo = -1.2
omega_hi = 1.2
omega_shrink = 0.88

[flow]
samples = 500
horizon = 20.0
eps = 0.5
rtol = 1e-11
atol = 1e-13
drift_tol = 1e-8

[eikonal]
eps = 1.0
t_max = 30.0
nodes_r = 29
nodes_y = 5
nodes_rho = 5
nodes_eta = 9
r_span = 7.0

[transport]
horizon = 8.0
n_samples = 129

[spectral]
kappa = 2.0
L = 8.0
dr = 0.01
m_max = 40
q_list = 1,2
t_lo = 0.02
t_hi = 0.2
t_points = 14
lambda_lo = 12.0
lambda_hi = 120.0
lambda_points = 25
delta = 4.0
tail_tol = 0.05

[output]
directory = out
seed = 1234
"""


@dataclass
class ExperimentConfig:
    """Validated experiment configuration bound to concrete model objects."""
    parser: configparser.ConfigParser
    path: str = "<defaults>"

    def get(self, section, key, cast=str):
        try:
            raw = self.parser.get(section, key)
        except (configparser.NoSectionError, configparser.NoOptionError) as exc:
            raise InvalidArgument(f"missing config key {section}.{key}") from exc
        try:
            if cast is bool:
                return raw.strip().lower() in ("1", "true", "yes", "on")
            return cast(raw)
        except ValueError as exc:
            raise InvalidArgument(
                f"config key {section}.{key} = {raw!r} is not a {cast.__name__}") from exc

    def floats(self, section, key):
        return [float(v) for v in self.get(section, key).split(",") if v.strip()]

    def ints(self, section, key):
        return [int(v) for v in self.get(section, key).split(",") if v.strip()]

    # -- bound objects -----------------------------------------------------

    def metric(self, kappa_override=None) -> MetricFamily:
        name = self.get("model", "family")
        kappa = self.get("model", "kappa", float) if kappa_override is None \
            else float(kappa_override)
        return family_from_name(name, c=self.get("model", "c", float),
                                kappa=kappa, n=self.get("model", "n", int))

    def spectral_metric(self) -> MetricFamily:
        """The family used by the spectral experiments (own kappa default)."""
        return self.metric(kappa_override=self.get("spectral", "kappa", float))

    def ladder(self) -> LadderSpec:
        return LadderSpec(
            R=self.get("regions", "R", float),
            w=self.get("regions", "w", float),
            eps=self.get("regions", "eps_area", float),
            r_ratio=self.get("regions", "r_ratio", float),
            shrink=self.get("regions", "shrink", float),
            omega=((self.get("regions", "omega_lo", float),
                    self.get("regions", "omega_hi", float)),),
            omega_shrink=self.get("regions", "omega_shrink", float),
        )

    def seed(self):
        return self.get("output", "seed", int)

    def out_dir(self, override=None) -> Path:
        return Path(override or self.get("output", "directory"))

    def t_grid(self):
        return np.geomspace(self.get("spectral", "t_lo", float),
                            self.get("spectral", "t_hi", float),
                            self.get("spectral", "t_points", int))

    def lambda_grid(self, refine=1):
        return np.geomspace(self.get("spectral", "lambda_lo", float),
                            self.get("spectral", "lambda_hi", float),
                            refine * self.get("spectral", "lambda_points", int))

    def validate(self):
        """Cross-check every block against the module preconditions."""
        w = self.get("regions", "w", float)
        if not 0.0 < w < 0.5:
            raise InvalidArgument(f"regions.w = {w} violates 0 < w < 1/2")
        self.metric()
        self.spectral_metric()
        self.ladder()
        if self.get("spectral", "dr", float) <= 0:
            raise InvalidArgument("spectral.dr must be positive")
        if self.get("spectral", "t_lo", float) <= 0:
            raise InvalidArgument("spectral.t_lo must be positive")
        if self.get("flow", "samples", int) < 1:
            raise InvalidArgument("flow.samples must be >= 1")
        for q in self.ints("spectral", "q_list"):
            if q < 1:
                raise InvalidArgument("spectral.q_list entries must be >= 1")
        return self


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Read the config file (defaults when path is None) and apply overrides.

    Overrides have the form 'section.key=value'.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.read_string(DEFAULT_CONFIG)
    label = "<defaults>"
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise InvalidArgument(f"config file not found: {path}")
        try:
            parser.read_string(p.read_text())
        except configparser.Error as exc:
            raise InvalidArgument(f"malformed config {path}: {exc}") from exc
        label = str(path)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise InvalidArgument(f"override {item!r} is not section.key=value")
        key, value = item.split("=", 1)
        section, name = key.split(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section.strip(), name.strip(), value.strip())
    return ExperimentConfig(parser=parser, path=label).validate()

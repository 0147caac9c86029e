"""Flat ``key = value`` configuration files for model specs and experiment plans.

Lines starting with ``#`` are comments. Lists are comma separated. Recognised
spec keys: ``model, d, d_star, rho, mu, theta, gamma, case_fraction, n, seed``.
Plans add ``table, B, methods, tau, T, xi, burn_in, alpha, lam, group_size,
inner, d_star_fraction, jobs``.
"""

import configparser

import numpy as np

from .errors import ParameterDomainError
from .model import CommonLocationSpec, ExchangeableSpec, OrdinalProbitSpec

SPEC_KEYS = {"model", "d", "d_star", "rho", "mu", "theta", "gamma", "case_fraction", "n", "seed"}
MODELS = ("common-location", "exchangeable", "ordinal")


def read_flat_config(path):
    parser = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#",), inline_comment_prefixes=("#",),
        interpolation=None,
    )
    parser.optionxform = str
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        parser.read_string("[root]\n" + text)
    except configparser.Error as exc:
        raise ParameterDomainError(f"{path}: {exc}") from None
    return {k.strip().replace("-", "_"): v.strip() for k, v in parser["root"].items()}


def _number(key, text, kind=float):
    try:
        value = kind(text)
    except (TypeError, ValueError):
        raise ParameterDomainError(f"{key}: cannot parse {text!r} as {kind.__name__}") from None
    return value


def get_int(conf, key, default=None):
    if key not in conf or conf[key] in ("", None):
        return default
    value = conf[key]
    if isinstance(value, str):
        value = _number(key, value, float)
    if int(value) != value:
        raise ParameterDomainError(f"{key}: expected an integer, got {value}")
    return int(value)


def get_float(conf, key, default=None):
    if key not in conf or conf[key] in ("", None):
        return default
    value = conf[key]
    return _number(key, value) if isinstance(value, str) else float(value)


def get_list(conf, key, kind=float, default=None):
    if key not in conf or conf[key] in ("", None):
        return default
    value = conf[key]
    if not isinstance(value, str):
        return [kind(v) for v in np.atleast_1d(value)]
    return [_number(key, part.strip(), kind) for part in value.split(",") if part.strip()]


def spec_from_config(conf):
    """Build ``(model, spec)`` from a flat mapping; errors name the offending key."""
    model = conf.get("model")
    if model not in MODELS:
        raise ParameterDomainError(f"model: expected one of {MODELS}, got {model!r}")
    d = get_int(conf, "d")
    if d is None:
        raise ParameterDomainError("d: required")
    try:
        if model == "common-location":
            d_star = get_int(conf, "d_star", int(round(0.8 * d)))
            spec = CommonLocationSpec(d, d_star, get_float(conf, "rho", 0.0), get_float(conf, "mu", 0.0))
        elif model == "exchangeable":
            spec = ExchangeableSpec(d, get_float(conf, "rho", 0.0))
        else:
            gamma = get_list(conf, "gamma", float, [-0.5, 0.5])
            if len(gamma) == 2:
                gamma = np.tile(gamma, (d, 1))
            elif len(gamma) == 2 * d:
                gamma = np.reshape(gamma, (d, 2))
            else:
                raise ParameterDomainError(f"gamma: expected 2 or {2 * d} values, got {len(gamma)}")
            spec = OrdinalProbitSpec(d, get_float(conf, "theta", 0.0), gamma,
                                     get_float(conf, "case_fraction", 0.2))
    except ParameterDomainError as exc:
        msg = str(exc)
        key = next((k for k in ("rho", "d_star", "gamma", "case_fraction", "d") if msg.startswith(k)), None)
        raise ParameterDomainError(msg if key else f"spec: {msg}") from None
    return model, spec


def spec_to_config(model, spec):
    out = {"model": model, "d": spec.d}
    if model == "common-location":
        out.update(d_star=spec.d_star, rho=spec.rho, mu=spec.mu)
    elif model == "exchangeable":
        out.update(rho=spec.rho)
    else:
        out.update(theta=spec.theta, gamma=[float(g) for g in np.ravel(spec.gamma)],
                   case_fraction=spec.case_fraction)
    return out

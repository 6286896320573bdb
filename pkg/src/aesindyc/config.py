"""INI run configuration with strict key checking.

Sections and keys::

    [environment]  BurgersConfig fields
    [drl]          PPO hyperparameters
    [surrogate]    autoencoder / dictionary / fitting settings
    [dyna]         mode = baseline | dyna, k_dyn, N_off, N_collect, ...
    [run]          seed

Unknown sections or keys raise :class:`ConfigError` naming the closest valid
key, so a typo never silently falls back to a default.
"""

from __future__ import annotations

import configparser
import difflib
from dataclasses import dataclass, field
from pathlib import Path

from .burgers_env import BurgersConfig
from .dyna import DynaConfig, SurrogateSettings
from .errors import ConfigError


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt(conv):
    def parse(s: str):
        return None if s.strip().lower() in ("", "none") else conv(s)

    parse.__name__ = f"optional {conv.__name__}"
    return parse


def _int_tuple(s: str) -> tuple:
    return tuple(int(v) for v in s.replace(",", " ").split())


def _float_tuple(s: str) -> tuple:
    return tuple(float(v) for v in s.replace(",", " ").split())


def _mode(s: str) -> str:
    s = s.strip().lower()
    if s not in ("baseline", "dyna"):
        raise ValueError("expected 'baseline' or 'dyna'")
    return s


SCHEMA = {
    "environment": {
        "L": float, "Nx": int, "nu": float, "dt_solver": float, "dt_control": float, "Nu": int,
        "support_width": float, "Nobs": int, "sigma_process": float, "sigma_obs": float, "Qw": float,
        "Rw": float, "x_ref": _opt(_float_tuple), "u_ref": _opt(_float_tuple), "horizon_s": float,
        "extrap_s": float,
    },
    "drl": {
        "hidden": int, "lr": float, "gamma": float, "gae_lambda": float, "clip_eps": float, "sgd_batch": int,
        "grad_clip": float, "update_epochs": int, "vf_coef": float, "log_std_init": float,
    },
    "surrogate": {
        "n_state_latent": int, "n_control_latent": int, "hidden_state": _opt(int), "hidden_control": _opt(int),
        "activation": str, "deg_state": int, "deg_control": int, "lambda1": float, "lambda2": float,
        "epochs": int, "batch": int, "lr": float, "clip": float, "split": float,
    },
    "dyna": {
        "mode": _mode, "k_dyn": int, "N_off": int, "N_collect": int, "total_epochs": int,
        "surrogate_horizon": _opt(int), "n_batch": _opt(int), "off_capacity": int, "on_capacity": int,
        "real_updates": _bool, "eval_seeds": _int_tuple, "eval_every": int,
    },
    "run": {"seed": int},
}

DRL_DEFAULTS = {
    "hidden": 128, "lr": 3e-4, "gamma": 0.99, "gae_lambda": 0.95, "clip_eps": 0.2, "sgd_batch": 256,
    "grad_clip": 0.5, "update_epochs": 10, "vf_coef": 0.5, "log_std_init": 0.0,
}


@dataclass
class RunConfig:
    env: BurgersConfig = field(default_factory=BurgersConfig)
    drl: dict = field(default_factory=lambda: dict(DRL_DEFAULTS))
    dyna: DynaConfig = field(default_factory=DynaConfig)
    mode: str = "dyna"
    seed: int = 0

    @property
    def k_dyn(self) -> int:
        return 1 if self.mode == "baseline" else self.dyna.k_dyn


def _valid_keys_message(section: str) -> str:
    return ", ".join(SCHEMA[section])


def _nearest(name: str, options) -> str | None:
    lower = {o.lower(): o for o in options}
    hit = difflib.get_close_matches(name.lower(), list(lower), n=1, cutoff=0.5)
    return lower[hit[0]] if hit else None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive (Nx vs nu)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    values: dict[str, dict] = {s: {} for s in SCHEMA}
    for section in cp.sections():
        if section not in SCHEMA:
            near = _nearest(section, SCHEMA)
            hint = f"; did you mean [{near}]?" if near else ""
            raise ConfigError(f"{source}: unknown section [{section}]{hint} valid sections: {', '.join(SCHEMA)}")
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                near = _nearest(key, SCHEMA[section])
                hint = f"; did you mean '{near}'?" if near else ""
                raise ConfigError(
                    f"{source}: unknown key '{key}' in [{section}]{hint} valid keys: {_valid_keys_message(section)}"
                )
            conv = SCHEMA[section][key]
            try:
                values[section][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: [{section}] {key} = {raw!r}: {exc}") from exc

    surrogate = SurrogateSettings(**values["surrogate"])
    d = dict(values["dyna"])
    mode = d.pop("mode", "dyna")
    try:
        env = BurgersConfig(**values["environment"])
        dyna = DynaConfig(surrogate=surrogate, **d)
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    drl = dict(DRL_DEFAULTS)
    drl.update(values["drl"])
    return RunConfig(env=env, drl=drl, dyna=dyna, mode=mode, seed=values["run"].get("seed", 0))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return parse_config(text, str(path))


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def resolved_sections(rc: RunConfig) -> dict:
    env = {k: getattr(rc.env, k) for k in SCHEMA["environment"]}
    sur = {k: getattr(rc.dyna.surrogate, k) for k in SCHEMA["surrogate"]}
    dyna = {"mode": rc.mode}
    dyna.update({k: getattr(rc.dyna, k) for k in SCHEMA["dyna"] if k != "mode"})
    return {"environment": env, "drl": dict(rc.drl), "surrogate": sur, "dyna": dyna, "run": {"seed": rc.seed}}


def dump_config(rc: RunConfig) -> str:
    """Every key with its effective value; parsing the result gives back ``rc``."""
    lines = []
    for section, kv in resolved_sections(rc).items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {_fmt(v)}" for k, v in kv.items())
        lines.append("")
    return "\n".join(lines)

"""Flat ``section.key = value`` run configuration.

Precedence, lowest first: built-in defaults, the ``run.scale`` preset, the
config file, command-line overrides. Unknown keys are rejected.
"""
from dataclasses import dataclass

from .agent import VARIANTS, AgentConfig
from .env import EnvConfig
from .risk import RiskConfig


class ConfigError(ValueError):
    pass


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _opt_float(text):
    if str(text).strip().lower() in ("", "none", "null"):
        return None
    return float(text)


def _opt_int(text):
    if str(text).strip().lower() in ("", "none", "null"):
        return None
    return int(float(text))


def _int(text):
    value = float(text)
    if value != int(value):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _bandwidth(text):
    text = str(text).strip()
    if text in ("scott", "paper_literal"):
        return text
    value = float(text)
    if value <= 0:
        raise ValueError("fixed bandwidth must be positive")
    return value


def _hidden(text):
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _choice(*options):
    def parse(text):
        text = str(text).strip()
        if text not in options:
            raise ValueError(f"expected one of {options}, got {text!r}")
        return text
    return parse


# key -> (parser, default)
KEYS = {
    "run.seed": (_int, 0),
    "run.scale": (_choice("smoke", "paper"), "smoke"),
    "run.output_dir": (str, ""),
    "run.run_id": (str, ""),
    "agent.variant": (_choice(*VARIANTS), "rho_qravi"),
    "agent.gamma": (float, 0.99),
    "agent.kappa": (float, 1.0),
    "agent.n_tau": (_int, 32),
    "agent.batch_size": (_int, 128),
    "agent.train_freq": (_int, 10),
    "agent.target_freq": (_int, 500),
    "agent.eta": (float, 1.0),
    "agent.eps0": (float, 1.0),
    "agent.eps_final": (float, 0.05),
    "agent.eps_decay_steps": (_opt_int, None),
    "agent.total_env_steps": (_int, 20_000),
    "agent.buffer_size": (_int, 50_000),
    "agent.qr_normalization": (_choice("mean", "literal"), "mean"),
    "agent.risk_shaped_targets": (_bool, False),
    "agent.checkpoint_every": (_int, 0),
    "risk.beta": (float, 0.9),
    "risk.c_max": (float, 0.1),
    "risk.lambda": (float, 0.5),
    "net.hidden": (_hidden, (120, 84)),
    "net.optimizer": (_choice("adam", "sgd"), "adam"),
    "net.lr": (float, 2.5e-4),
    "net.k_alpha": (_opt_float, None),
    "kde.bandwidth": (_bandwidth, "scott"),
    "kde.grid_size": (_int, 512),
    "env.horizon": (_int, 200),
    "env.wheel_radius": (float, 0.02),
    "env.half_axle": (float, 0.05),
    "env.robot_radius": (float, 0.05),
    "env.hazard_radius": (float, 0.1),
    "env.obstacle_half_width": (float, 0.075),
    "env.goal_radius": (float, 0.15),
    "env.lidar_range": (float, 3.0),
    "env.lidar_bins": (_int, 16),
    "env.step_cost": (float, 0.001),
    "env.goal_bonus": (float, 1.0),
    "env.wheel_speed": (float, 1.0),
    "env.pose_noise": (float, 0.0),
    "env.n_hazards": (_int, 10),
    "env.n_obstacles": (_int, 10),
}

SCALES = {
    "smoke": {"agent.total_env_steps": 20_000, "env.horizon": 200, "agent.buffer_size": 50_000},
    "paper": {"agent.total_env_steps": 1_000_000, "env.horizon": 1000, "agent.buffer_size": 500_000},
}


def parse_text(text, source="<config>"):
    """Parse ``key = value`` lines into a raw string mapping."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        raw[key] = (value, f"{source}:{lineno}")
    return raw


def read_file(path):
    try:
        with open(path) as fh:
            return parse_text(fh.read(), str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @property
    def agent(self):
        v = self.values
        return AgentConfig(
            variant=v["agent.variant"],
            risk=RiskConfig(beta=v["risk.beta"], c_max=v["risk.c_max"], lam=v["risk.lambda"]),
            gamma=v["agent.gamma"], kappa=v["agent.kappa"], n_tau=v["agent.n_tau"],
            batch_size=v["agent.batch_size"], train_freq=v["agent.train_freq"],
            target_freq=v["agent.target_freq"], eta=v["agent.eta"], eps0=v["agent.eps0"],
            eps_final=v["agent.eps_final"], eps_decay_steps=v["agent.eps_decay_steps"],
            total_env_steps=v["agent.total_env_steps"], buffer_size=v["agent.buffer_size"],
            seed=v["run.seed"], hidden=v["net.hidden"], optimizer=v["net.optimizer"],
            lr=v["net.lr"], k_alpha=v["net.k_alpha"],
            qr_normalization=v["agent.qr_normalization"], bandwidth=v["kde.bandwidth"],
            kde_grid_size=v["kde.grid_size"], risk_shaped_targets=v["agent.risk_shaped_targets"],
            checkpoint_every=v["agent.checkpoint_every"],
        )

    @property
    def env(self):
        v = self.values
        return EnvConfig(**{k[4:]: val for k, val in v.items() if k.startswith("env.")})

    @property
    def run_id(self):
        if self.values["run.run_id"]:
            return self.values["run.run_id"]
        return f"{self.values['agent.variant']}_beta{self.values['risk.beta']}_seed{self.values['run.seed']}"

    def dump(self):
        """Resolved config as text; feeding it back reproduces the run."""
        lines = []
        for key in sorted(self.values):
            value = self.values[key]
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif value is None:
                value = "none"
            elif isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def resolve(file_raw=None, overrides=None):
    """Build a validated :class:`RunConfig`.

    ``file_raw`` comes from :func:`parse_text`; ``overrides`` maps keys to
    strings (e.g. from ``--risk.beta 0.95``).
    """
    file_raw = dict(file_raw or {})
    merged = {k: (str(v), "command line") for k, v in (overrides or {}).items()}
    for key in merged:
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
    layered = dict(file_raw)
    layered.update(merged)

    scale_text = layered.get("run.scale", ("smoke", "default"))[0]
    try:
        scale = KEYS["run.scale"][0](scale_text)
    except ValueError as exc:
        raise ConfigError(f"run.scale: {exc}") from exc

    values = {k: default for k, (_, default) in KEYS.items()}
    values.update(SCALES[scale])
    for key, (text, where) in layered.items():
        parser = KEYS[key][0]
        try:
            values[key] = parser(text)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: bad value for {key}: {exc}") from exc
    rc = RunConfig(values)
    try:
        rc.agent
        rc.env
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return rc

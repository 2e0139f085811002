"""Component-removal sweeps: retrain with one piece disabled, evaluate on a
shared suite, and tabulate per-seed and mean metrics per variant.

Disabling an ability stream removes both its encoder branch and the shaping
reward tied to it, since the two exist as a pair:
search <-> detect bonus, navigation <-> approach bonus,
exploration <-> revisit penalty, obstacle <-> collision penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import ConfigError
from .metrics import MetricsReport, evaluate
from .model import Model, ModelConfig
from .nn import RngStream
from .rewards import RewardConfig
from .training import TrainConfig, train

TOGGLES = ("no_search", "no_navigation", "no_exploration", "no_obstacle",
           "no_collab", "no_shaping", "shaping_always")

_STREAM_REWARD = {
    "search": "detect_bonus",
    "navigation": "approach_bonus",
    "exploration": "revisit_penalty",
    "obstacle": "collision_penalty",
}

METRIC_NAMES = ("sr", "spl", "ssr", "nsnpl", "rep", "cp")


def variant_configs(model_cfg: ModelConfig, train_cfg: TrainConfig,
                    reward_cfg: RewardConfig, toggle: str) -> tuple:
    """Configs for one named variant; 'full' returns the inputs unchanged."""
    if toggle == "full":
        return model_cfg, train_cfg, reward_cfg
    if toggle == "no_collab":
        return replace(model_cfg, collab=False), train_cfg, reward_cfg
    if toggle == "no_shaping":
        return model_cfg, train_cfg, replace(reward_cfg, shaping_episodes=0)
    if toggle == "shaping_always":
        return model_cfg, train_cfg, replace(
            reward_cfg, shaping_episodes=train_cfg.total_episodes)
    if toggle.startswith("no_"):
        stream = toggle[3:]
        if stream in _STREAM_REWARD:
            streams = tuple(s for s in model_cfg.streams if s != stream)
            if streams == model_cfg.streams:
                raise ConfigError(f"stream {stream!r} is already disabled")
            zeroed = {_STREAM_REWARD[stream]: 0.0}
            return (replace(model_cfg, streams=streams), train_cfg,
                    replace(reward_cfg, **zeroed))
    raise ConfigError(f"unknown ablation toggle {toggle!r}; "
                      f"choose from {', '.join(TOGGLES)}")


@dataclass
class AblationCell:
    variant: str
    seed: int
    report: MetricsReport
    episodes: int  # training episodes actually run


@dataclass
class AblationResult:
    cells: list
    means: dict  # variant -> {metric -> float | None}


def _metric_values(report: MetricsReport) -> dict:
    m = report.overall
    return {"sr": m.sr, "spl": m.spl, "ssr": m.ssr, "nsnpl": m.nsnpl,
            "rep": m.rep, "cp": m.cp}


def _mean_over_seeds(cells: list) -> dict:
    out = {}
    for name in METRIC_NAMES:
        vals = [_metric_values(c.report)[name] for c in cells]
        vals = [v for v in vals if v is not None]
        out[name] = sum(vals) / len(vals) if vals else None
    return out


def ablation_run(model_cfg: ModelConfig, train_cfg: TrainConfig,
                 reward_cfg: RewardConfig, train_plans, eval_suite,
                 toggles=TOGGLES, seeds=(0, 1, 2), max_eval_steps: int = 100,
                 allowed_targets=None, log_dir=None) -> AblationResult:
    """Train and evaluate 'full' plus one variant per toggle, per seed."""
    for toggle in toggles:
        if toggle not in TOGGLES:
            raise ConfigError(f"unknown ablation toggle {toggle!r}; "
                              f"choose from {', '.join(TOGGLES)}")
    cells = []
    means = {}
    for variant in ("full",) + tuple(toggles):
        m_cfg, t_cfg, r_cfg = variant_configs(model_cfg, train_cfg, reward_cfg, variant)
        variant_cells = []
        for seed in seeds:
            log_path = None
            if log_dir is not None:
                log_path = f"{log_dir}/train_{variant}_s{seed}.jsonl"
            result = train(m_cfg, replace(t_cfg, seed=seed), r_cfg, train_plans,
                           log_path=log_path, allowed_targets=allowed_targets)
            model = Model(m_cfg, RngStream(seed))
            model.params.load_arrays(result.arrays)
            report, _ = evaluate(model, eval_suite, max_steps=max_eval_steps)
            variant_cells.append(AblationCell(variant, seed, report, result.episodes))
        cells.extend(variant_cells)
        means[variant] = _mean_over_seeds(variant_cells)
    return AblationResult(cells=cells, means=means)


def format_ablation_table(result: AblationResult) -> str:
    """One row per (variant, seed) plus a mean row per variant."""
    def fmt(v):
        return "NA" if v is None else f"{v:.2f}"

    header = (f"{'variant':<16}{'seed':>6}" +
              "".join(f"{n.upper():>8}" for n in METRIC_NAMES))
    lines = [header]
    seen = []
    for cell in result.cells:
        if cell.variant not in seen:
            seen.append(cell.variant)
        vals = _metric_values(cell.report)
        lines.append(f"{cell.variant:<16}{cell.seed:>6}" +
                     "".join(f"{fmt(vals[n]):>8}" for n in METRIC_NAMES))
    for variant in seen:
        mean = result.means[variant]
        lines.append(f"{variant:<16}{'mean':>6}" +
                     "".join(f"{fmt(mean[n]):>8}" for n in METRIC_NAMES))
    return "\n".join(lines)

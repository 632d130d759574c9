"""Per-lead evaluation of forecast ensembles and the metrics CSV."""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np

from src.core.bands import ThresholdSpec
from src.core.grid import ForecastEnsemble, RadarSequence
from src.utils.error_handler import ContractError
from src.utils.logger import logger
from src.verification import metrics
from src.verification.metrics import Event

CSV_HEADER = "lead_min,metric,descriptor,value"


@dataclass
class MetricSeries:
    """One metric over forecast lead times."""

    metric: str
    descriptor: str
    lead_minutes: List[int]
    values: List[float] = field(default_factory=list)

    def mean(self, leads: Optional[int] = None) -> float:
        """Mean of the defined values over the first ``leads`` entries."""
        window = self.values[:leads] if leads else self.values
        defined = [v for v in window if not math.isnan(v)]
        return float(np.mean(defined)) if defined else math.nan


def evaluate_forecast(
    ens: ForecastEnsemble,
    obs: RadarSequence,
    thresholds: Sequence[float] = (1.0, 4.0, 8.0),
    scales: Sequence[int] = (1, 4, 16),
    csi_mode: str = "member-mean",
) -> List[MetricSeries]:
    """Score an ensemble lead by lead.

    Produces CSI, POD and FAR per exceedance threshold, CSI per band above the
    first threshold, CRPS per pooling scale and the ensemble-mean MSE.

    Raises:
        ContractError: If the observation length differs from the forecast horizon
    """
    if len(obs) != ens.horizon:
        raise ContractError(f"forecast has {ens.horizon} leads but observations hold {len(obs)} frames")
    spec = ThresholdSpec(tuple(thresholds))
    leads = obs.lead_minutes()

    exceedances = [Event.exceedance(t) for t in spec.thresholds]
    bands = [Event.band(lo, hi) for lo, hi in spec.intervals()[1:-1]]

    series: Dict[str, MetricSeries] = {}

    def record(name: str, descriptor: str, value: float) -> None:
        key = f"{name}|{descriptor}"
        if key not in series:
            series[key] = MetricSeries(name, descriptor, leads)
        series[key].values.append(value)

    for lead in range(ens.horizon):
        members = ens.at_lead(lead)
        truth = obs[lead]
        for event in exceedances:
            record("csi", event.descriptor, metrics.ensemble_csi(members, truth, event, csi_mode))
        for event in bands:
            record("csi", event.descriptor, metrics.ensemble_csi(members, truth, event, csi_mode))
        for event in exceedances:
            counts = [metrics.contingency(m, truth, event) for m in members]
            record("pod", event.descriptor, metrics.nan_mean([c.pod for c in counts]))
            record("far", event.descriptor, metrics.nan_mean([c.far for c in counts]))
        for scale in scales:
            pooled = [metrics.pool(m, scale) for m in members]
            record("crps", f"scale={scale}", metrics.crps_ensemble(pooled, metrics.pool(truth, scale)))
        record("mse", "ensemble-mean", metrics.mse(ens.mean_field(lead), truth))

    logger.info(f"Evaluated {ens.size}-member {ens.system} forecast over {ens.horizon} leads")
    return list(series.values())


def _format_value(value: float) -> str:
    return "nan" if math.isnan(value) else f"{value:.6g}"


def write_metrics_csv(
    series: Iterable[MetricSeries],
    path: Union[str, Path],
    meta: Optional[Mapping[str, object]] = None,
) -> Path:
    """Write ``lead_min,metric,descriptor,value`` rows ordered by lead.

    A ``<path>.meta`` sidecar of ``key=value`` lines records how the series
    were produced (ensemble size, CSI mode, system).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    series = list(series)
    lines = [CSV_HEADER]
    horizon = len(series[0].values) if series else 0
    for lead in range(horizon):
        for s in series:
            lines.append(f"{s.lead_minutes[lead]},{s.metric},{s.descriptor},{_format_value(s.values[lead])}")
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")
    if meta is not None:
        with open(path.with_name(path.name + ".meta"), "w", encoding="utf-8", newline="\n") as handle:
            handle.writelines(f"{key}={value}\n" for key, value in meta.items())
    logger.info(f"Wrote {len(lines) - 1} metric rows to {path}")
    return path


def find_series(series: Iterable[MetricSeries], metric: str, descriptor: str) -> MetricSeries:
    """Look up one series by metric name and descriptor."""
    for s in series:
        if s.metric == metric and s.descriptor == descriptor:
            return s
    raise KeyError(f"{metric} {descriptor}")

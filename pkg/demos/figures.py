"""Reproductions of the entrainment, RC-contraction and rigid-body tracking experiments."""
import logging
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from errors import DiffPassError
from plugins.svg_plot import SvgLinePlot
from simulation.integrator import DEFAULT_DT, EnsembleResult, ensemble_contraction
from simulation.signals import parse_signal, parse_signals
from demos.registry import oscillator, rc_circuit, rigid_body

logger = logging.getLogger(__name__)

OSCILLATOR_STARTS = [-2.5, -1.0, 0.0, 1.0, 2.5]
RC_STARTS = [0.5, 1.0, 2.0, 5.0]
RIGID_BODY_STARTS = [(-1.0, 0.0, 0.0), (0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]
TRACKING_REFERENCE = "3*sin(pi*t)"


class UnknownFigure(DiffPassError):
    """Raised for a figure name that has no reproduction."""
    pass


@dataclass
class FigureResult:
    name: str
    certified: bool
    ensembles: Dict[str, EnsembleResult] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    def plot(self):
        plot = SvgLinePlot(self.name, y_label="state")
        for label, ensemble in self.ensembles.items():
            for index, states in zip(ensemble.member_indices, ensemble.states):
                count = len(ensemble.times)
                for component in range(states.shape[1]):
                    plot.add_series(ensemble.times, states[:count, component],
                                    f"{label} member {index} x{component + 1}")
        return plot

    def summary(self):
        return {
            'figure': self.name,
            'certified': self.certified,
            'inputs': dict(self.inputs),
            'ensembles': {label: ensemble.summary() for label, ensemble in self.ensembles.items()},
            'notes': list(self.notes),
        }


def _oscillator_figure(name, input_text, dt, T, threads, certified):
    model = oscillator('C')
    ensemble = ensemble_contraction(model.system, [np.array([x]) for x in OSCILLATOR_STARTS],
                                    parse_signals([input_text]), dt, T, threads=threads)
    result = FigureResult(name, certified, {'oscillator': ensemble}, {'oscillator': input_text})
    if not certified:
        result.notes.append("Large input: members may leave the chart (-pi, pi); not a passivity claim.")
    return result


def fig1_small(dt=DEFAULT_DT, T=10.0, threads=None):
    return _oscillator_figure("fig1-small", "1+0.5*sin(pi*t)", dt, T, threads, certified=True)


def fig1_large(dt=DEFAULT_DT, T=10.0, threads=None):
    return _oscillator_figure("fig1-large", "1+5*sin(pi*t)", dt, T, threads, certified=False)


def fig2(dt=DEFAULT_DT, T=10.0, threads=None):
    model = rc_circuit()
    small, large = "2+sin(2*pi*t)", "20+20*sin(2*pi*t)"
    contraction = ensemble_contraction(model.output, [np.array([v]) for v in RC_STARTS],
                                       parse_signals([small]), dt, T, threads=threads)
    harmonic = ensemble_contraction(model.output, [np.array([0.5]), np.array([2.0])],
                                    parse_signals([large]), dt, T, threads=threads)
    return FigureResult("fig2", True, {'contraction': contraction, 'large-harmonic': harmonic},
                        {'contraction': small, 'large-harmonic': large})


def _rigid_body_figure(name, variant, dt, T, threads):
    model = rigid_body()
    setup = model.tracking_input(parse_signal(TRACKING_REFERENCE), variant)
    ensemble = ensemble_contraction(setup.system, [np.array(w) for w in RIGID_BODY_STARTS],
                                    setup.signal, dt, T, threads=threads)
    result = FigureResult(name, True, {variant: ensemble}, {variant: str(setup.signal[0])})
    result.notes.append(f"Reference d(t) = {TRACKING_REFERENCE}")
    return result


def fig3_track(dt=DEFAULT_DT, T=20.0, threads=None):
    return _rigid_body_figure("fig3-track", "base", dt, T, threads)


def fig3_feedback(dt=DEFAULT_DT, T=20.0, threads=None):
    return _rigid_body_figure("fig3-feedback", "feedback", dt, T, threads)


FIGURES = {
    'fig1-small': fig1_small,
    'fig1-large': fig1_large,
    'fig2': fig2,
    'fig3-track': fig3_track,
    'fig3-feedback': fig3_feedback,
}


def run_figure(name, dt=None, threads=None):
    builder = FIGURES.get(name)
    if builder is None:
        raise UnknownFigure(f"Unknown demo '{name}'. Available: {', '.join(FIGURES)}")
    logger.info(f"Reproducing {name}")
    if dt is None:
        return builder(threads=threads)
    return builder(dt=dt, threads=threads)


def save_figure(result: FigureResult, manager):
    """Writes one CSV bundle per ensemble, the summary JSON and the SVG plot."""
    paths = []
    for label, ensemble in result.ensembles.items():
        paths.extend(manager.write_ensemble(ensemble, f"{result.name}_{label}"))
    paths.append(manager.write_json(result.summary(), f"{result.name}.json"))
    paths.append(manager.write_svg(result.plot(), f"{result.name}.svg"))
    return paths

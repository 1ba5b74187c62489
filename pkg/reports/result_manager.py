import io
import json
import logging
import os

import numpy as np

from errors import DiffPassError

logger = logging.getLogger(__name__)


class ResultManagerError(DiffPassError):
    """Base class for exceptions in this module."""
    pass


class OutputWriteError(ResultManagerError):
    """Exception raised when an artifact cannot be written."""
    pass


class ResultManager:
    def __init__(self, output_dir=None, config=None):
        """Resolves the output directory and CSV precision from settings.ini unless given."""
        logger.debug("Entering ResultManager.__init__")
        self.config = config
        configured_dir = config.get('Output', 'output_dir', fallback='results') if config is not None else 'results'
        self.output_dir = output_dir or configured_dir
        self.csv_digits = config.getint('Output', 'csv_digits', fallback=17) if config is not None else 17
        self._create_output_directory()
        logger.debug(f"ResultManager initialized (output_dir={self.output_dir}).")

    def _create_output_directory(self):
        try:
            os.makedirs(self.output_dir, exist_ok=True)
        except OSError as e:
            logger.error(f"Error creating output directory {self.output_dir}: {e}")
            raise OutputWriteError(f"Cannot create output directory {self.output_dir}: {e}") from e

    def path_for(self, name):
        return name if os.path.isabs(name) else os.path.join(self.output_dir, name)

    def _write_text(self, name, text):
        path = self.path_for(name)
        try:
            directory = os.path.dirname(path)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(path, 'w', encoding='utf-8', newline='\n') as handle:
                handle.write(text)
        except OSError as e:
            logger.error(f"Error writing {path}: {e}")
            raise OutputWriteError(f"Cannot write {path}: {e}") from e
        logger.info(f"Wrote {path}")
        return path

    def csv_text(self, header, table):
        buffer = io.StringIO()
        np.savetxt(buffer, np.atleast_2d(table), fmt=f"%.{self.csv_digits}g", delimiter=',',
                   header=','.join(header), comments='')
        return buffer.getvalue()

    def trajectory_csv(self, traj):
        """Trajectory table as CSV text (one row per grid time)."""
        return self.csv_text(traj.header(), traj.table())

    def write_json(self, data, name):
        return self._write_text(name, json.dumps(data, indent=2, sort_keys=False) + "\n")

    def write_report(self, report, name, include_table=False):
        """Writes a ConditionReport as JSON, optionally with a per-point CSV sidecar."""
        path = self.write_json(report.to_dict(), name)
        if include_table:
            n = len(report.sample_points[0]) if report.sample_points else 0
            m = 0 if not report.sample_inputs or report.sample_inputs[0] is None else len(report.sample_inputs[0])
            header = [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)] + ['value']
            self._write_text(os.path.splitext(name)[0] + '.csv', self.csv_text(header, report.table()))
        return path

    def write_trajectory(self, traj, name):
        return self._write_text(name, self.trajectory_csv(traj))

    def write_ensemble(self, result, name):
        """One CSV per member (t, x1..xn) plus a summary JSON; returns the written paths."""
        paths = []
        count = len(result.times)
        for index, states in zip(result.member_indices, result.states):
            header = ['t'] + [f"x{i + 1}" for i in range(states.shape[1])]
            table = np.column_stack([result.times, states[:count]])
            paths.append(self._write_text(f"{name}_member{index}.csv", self.csv_text(header, table)))
        spread = np.column_stack([result.times, result.spread])
        paths.append(self._write_text(f"{name}_spread.csv", self.csv_text(['t', 'spread'], spread)))
        paths.append(self.write_json(result.summary(), f"{name}_summary.json"))
        return paths

    def write_svg(self, plot, name):
        return self._write_text(name, plot.render())

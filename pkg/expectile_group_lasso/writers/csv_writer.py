"""
Writer that stores report tables as CSV files: ``<out_dir>/<table>.csv`` unless a table has an explicit path.
"""
import logging
import os

from collections import OrderedDict

import pandas as pd

from expectile_group_lasso.writers.base import BaseWriter

logger = logging.getLogger(__name__)


class CsvWriter(BaseWriter):
    def __init__(self, configuration):
        out_dir = configuration.get('out_dir')
        if not out_dir:
            raise RuntimeError('CSV writer initialization failed: no output directory configured')
        self.out_dir = out_dir
        self.paths = dict(configuration.get('paths') or {})
        self.tables = OrderedDict()
        self.written = []
        self.failed = []

    @property
    def name(self):
        return 'CSV'

    def path(self, table):
        return self.paths.get(table) or os.path.join(self.out_dir, '{}.csv'.format(table))

    def add_report(self, report):
        for table, frame in report.tables().items():
            self.tables.setdefault(table, []).append(frame)
        logger.debug('CSV writer: collected %s report', report.kind)

    def flush(self):
        for table, frames in self.tables.items():
            path = self.path(table)
            try:
                directory = os.path.dirname(path)
                if directory:
                    os.makedirs(directory, exist_ok=True)
                pd.concat(frames, ignore_index=True).to_csv(path, index=False)
                self.written.append(path)
                logger.info('Wrote %s', path)
            except Exception:
                logger.exception('%s writer failed to write table %s to %s', self.name, table, path)
                self.failed.append(path)
        self.tables.clear()

"""
Writer rendering a plain-text summary per report kind from the Jinja2 templates.
"""
import logging
import os

from collections import OrderedDict

from expectile_group_lasso.template_loader import load_template
from expectile_group_lasso.writers.base import BaseWriter

TPL_NAME = '{}.txt.jinja2'

logger = logging.getLogger(__name__)


class SummaryWriter(BaseWriter):
    def __init__(self, configuration):
        out_dir = configuration.get('out_dir')
        if not out_dir:
            raise RuntimeError('Summary writer initialization failed: no output directory configured')
        self.out_dir = out_dir
        self.stem = configuration.get('stem')
        self.contexts = OrderedDict()
        self.written = []
        self.failed = []

    @property
    def name(self):
        return 'Summary'

    def add_report(self, report):
        self.contexts.setdefault(report.kind, []).append(report.context())

    def flush(self):
        for kind, reports in self.contexts.items():
            path = os.path.join(self.out_dir, '{}_summary.txt'.format(self.stem or kind))
            try:
                text = load_template(TPL_NAME.format(kind)).render(reports=reports)
                os.makedirs(self.out_dir, exist_ok=True)
                with open(path, 'w') as fp:
                    fp.write(text)
                self.written.append(path)
                logger.info('Wrote %s', path)
            except Exception:
                logger.exception('%s writer failed to render %s summary to %s', self.name, kind, path)
                self.failed.append(path)
        self.contexts.clear()

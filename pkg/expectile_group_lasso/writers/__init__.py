from expectile_group_lasso.writers.base import BaseWriter

from expectile_group_lasso.writers.csv_writer import CsvWriter
from expectile_group_lasso.writers.summary import SummaryWriter


BUILTIN_WRITERS = {
    'csv': CsvWriter,
    'summary': SummaryWriter,
}


__all__ = (
    'BUILTIN_WRITERS',
    'BaseWriter',
    'CsvWriter',
    'SummaryWriter',
)

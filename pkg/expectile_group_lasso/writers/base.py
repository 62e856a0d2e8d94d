"""
Base report writer.
"""


class BaseWriter:
    """
    BaseWriter implementing a contextmanager: reports are collected with ``add_report`` and written on exit.

    A report exposes ``kind``, ``tables()`` (table name to DataFrame) and ``context()`` (template variables).
    Writers record the paths they wrote in ``written`` and the ones that failed in ``failed``.
    """

    def __init__(self, configuration):
        pass

    @property
    def name(self):
        raise NotImplementedError()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.flush()

    def add_report(self, report):
        raise NotImplementedError()

    def flush(self):
        raise NotImplementedError()

"""Exception hierarchy shared by every pipeline stage."""


class XStanceError(Exception):
    """Base class; the CLI maps subclasses onto exit codes."""

    exit_code = 1


class InputError(XStanceError):
    exit_code = 2


class UnknownLabel(InputError):
    def __init__(self, raw, lineno: int | None = None):
        where = f"line {lineno}: " if lineno is not None else ""
        super().__init__(f"{where}unknown stance label: {raw!r}")
        self.raw, self.lineno = raw, lineno


class ParseError(InputError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateId(InputError):
    def __init__(self, line, record_id):
        super().__init__(f"line {line}: duplicate id {record_id!r}")
        self.line = line
        self.record_id = record_id


class StratificationError(InputError):
    pass


class ConfigError(InputError):
    pass


class EmptyCorpus(InputError):
    pass


class EmptyPool(InputError):
    pass


class AugmentationError(XStanceError):
    exit_code = 2


class MissingArtifact(XStanceError):
    exit_code = 3


class ShapeError(XStanceError, ValueError):
    exit_code = 2


class DivergenceError(XStanceError):
    exit_code = 4

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(f"{message} (epoch={epoch}, batch={batch})")
        self.epoch = epoch
        self.batch = batch

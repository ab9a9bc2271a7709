class ExportError(Exception):
    pass


class ModelLoadFailure(ExportError):
    pass


class DuplicateKey(ExportError):
    pass


class EmptyInput(ExportError):
    pass


class MalformedLine(ExportError):
    pass

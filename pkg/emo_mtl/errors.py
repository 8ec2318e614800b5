class EmoMTLError(Exception):
    "Base class for every error raised by emo_mtl."


class DimensionError(EmoMTLError, ValueError):
    pass


class LabelError(EmoMTLError, ValueError):
    pass


class ParameterError(EmoMTLError, ValueError):
    pass


class OptimizerStateError(EmoMTLError, RuntimeError):
    pass


class IngestionError(EmoMTLError, ValueError):
    pass


class SchemaError(EmoMTLError, ValueError):
    pass


class SplitError(EmoMTLError, ValueError):
    pass


class ConfigError(EmoMTLError, ValueError):
    """Invalid configuration.

    ``fields`` maps a dotted field path (``tasks[0].role``) to a message.
    """

    def __init__(self, fields):
        if isinstance(fields, str):
            fields = {"config": fields}
        self.fields = dict(fields)
        message = "; ".join(f"{key}: {value}" for key, value in self.fields.items())
        super().__init__(message)


class RegistryError(EmoMTLError, KeyError):
    def __str__(self):
        # KeyError quotes its argument; keep the message readable.
        return str(self.args[0]) if self.args else ""


class DataError(EmoMTLError, RuntimeError):
    pass


class CorruptCheckpointError(EmoMTLError, ValueError):
    def __init__(self, message, record=None):
        self.record = record
        if record is not None:
            message = f"{message} (record {record!r})"
        super().__init__(message)


class EvaluationError(EmoMTLError, ValueError):
    pass

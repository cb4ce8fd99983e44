"""Exception hierarchy. ``exit_code`` is what the CLI returns for each class."""


class FormscreenError(Exception):
    exit_code = 2


class InputError(FormscreenError, ValueError):
    pass


class ConfigError(InputError):
    pass


class DatasetError(InputError):
    pass


class SmilesError(InputError):
    def __init__(self, text: str, offset: int, reason: str):
        self.text = text
        self.offset = offset
        self.reason = reason
        super().__init__(f"SMILES {text!r} at offset {offset}: {reason}")


class ShapeError(FormscreenError, ValueError):
    pass


class StateError(FormscreenError, RuntimeError):
    pass


class ConventionError(FormscreenError):
    pass


class ProtocolError(FormscreenError):
    pass


class GenerationError(FormscreenError):
    pass


class NumericError(FormscreenError, ArithmeticError):
    exit_code = 3

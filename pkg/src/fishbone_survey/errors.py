"""Exception hierarchy. ``exit_code`` maps each category onto the CLI's exit status."""


class FishboneError(Exception):
    exit_code = 2


class ConfigError(FishboneError, ValueError):
    exit_code = 1


class DataError(FishboneError, ValueError):
    exit_code = 2


class ProviderError(FishboneError, RuntimeError):
    exit_code = 3

    def __init__(self, message, batch_index=None, attempts=0):
        super().__init__(message)
        self.batch_index = batch_index
        self.attempts = attempts

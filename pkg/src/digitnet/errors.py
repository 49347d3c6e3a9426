"""Exception hierarchy shared by every module.

Each class carries a ``category`` string, used by the command line front end
to print ``error: <category>: <detail>`` and to choose an exit code.
"""


class DigitNetError(Exception):
    category = "internal"


class ShapeError(DigitNetError, ValueError):
    category = "shape"


class DomainError(DigitNetError, ValueError):
    category = "domain"


class ConfigError(DigitNetError, ValueError):
    category = "config"


class FormatError(DigitNetError, ValueError):
    category = "format"


class VersionError(FormatError):
    category = "version"


class UserError(DigitNetError):
    category = "user"


class UndefinedSimilarityError(DomainError):
    category = "domain"

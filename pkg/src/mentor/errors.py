"""Exception hierarchy. Broad classes map to CLI exit codes:
ConfigError -> 2, DataError -> 3, NumericalError -> 4."""


class MentorError(Exception):
    pass


class ConfigError(MentorError):
    pass


class DataError(MentorError):
    pass


class NumericalError(MentorError):
    pass


# --- config ---

class UnknownKey(ConfigError):
    def __init__(self, name):
        super().__init__(f"unknown config key: {name!r}")
        self.name = name


class BadValue(ConfigError):
    """Type or range violation for a config key."""

    def __init__(self, key, message):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


# --- data / ingest ---

class MissingFile(DataError):
    def __init__(self, path):
        super().__init__(f"missing file: {path}")
        self.path = path


class MalformedLine(DataError):
    def __init__(self, line_no, text=""):
        super().__init__(f"malformed line {line_no}: {text!r}")
        self.line_no = line_no


class EmptyCore(DataError):
    def __init__(self, k):
        super().__init__(f"{k}-core filtering removed every interaction")
        self.k = k


class BadMagic(DataError):
    def __init__(self, path, found):
        super().__init__(f"{path}: bad magic {found!r}")
        self.found = found


class DimensionMismatch(DataError):
    def __init__(self, expected, found):
        super().__init__(f"dimension mismatch: expected {expected}, found {found}")
        self.expected = expected
        self.found = found


class MissingItemRow(DataError):
    def __init__(self, token):
        super().__init__(f"feature file has no row for item {token!r}")
        self.token = token


class NonFiniteValue(DataError):
    def __init__(self, row, col):
        super().__init__(f"non-finite feature value at ({row}, {col})")
        self.row = row
        self.col = col


class MissingPrerequisite(DataError):
    def __init__(self, artifact):
        super().__init__(f"missing prerequisite artifact: {artifact}")
        self.artifact = artifact


# --- graphs / model ---

class ZeroVector(DataError):
    def __init__(self, where=""):
        super().__init__(f"zero-norm vector {where}".strip())


class IsolatedNode(DataError):
    def __init__(self, idx):
        super().__init__(f"node {idx} has no training interactions")
        self.idx = idx


class KTooLarge(DataError):
    def __init__(self, k, n_items):
        super().__init__(f"k={k} but only {n_items} item(s)")


class IndexOutOfRange(DataError):
    def __init__(self, idx, bound):
        super().__init__(f"index {idx} out of range [0, {bound})")


class EmptyMatrix(DataError):
    def __init__(self):
        super().__init__("matrix has no rows")


class ZeroRow(DataError):
    def __init__(self, row):
        super().__init__(f"row {row} has zero norm")
        self.row = row


# --- training ---

class NoNegativesAvailable(DataError):
    def __init__(self, user):
        super().__init__(f"user {user} interacted with every item")
        self.user = user


class NonFiniteLoss(NumericalError):
    def __init__(self, term):
        super().__init__(f"loss term {term!r} is non-finite")
        self.term = term


class NonFiniteUpdate(NumericalError):
    def __init__(self, name):
        super().__init__(f"optimizer update for {name!r} is non-finite")
        self.name = name


class Diverged(NumericalError):
    def __init__(self, epoch):
        super().__init__(f"training diverged at epoch {epoch}")
        self.epoch = epoch

"""Exception types raised across the package."""


class MarylandError(Exception):
    """Base class for all package errors."""


class RegionTooLarge(MarylandError):
    def __init__(self, size, cap):
        super().__init__(f"region has {size} modes, cap is {cap}")
        self.size = size
        self.cap = cap


class SingularPhase(MarylandError):
    """theta + j.alpha lies within the singularity tolerance of a cot pole."""

    def __init__(self, site, distance):
        super().__init__(f"phase at site {tuple(site)} is {distance:.3e} from a pole")
        self.site = tuple(int(s) for s in site)
        self.distance = distance


class MatchingIncomplete(MarylandError):
    def __init__(self, unmatched):
        super().__init__(f"no admissible eigenvector for sites {unmatched}")
        self.unmatched = unmatched


class AsymmetricBox(MarylandError):
    pass


class PoleOnGrid(MarylandError):
    def __init__(self, theta, site):
        super().__init__(f"theta={theta!r} hits a cot pole for shift {site}")
        self.theta = theta
        self.site = site


class BlockTooSmall(MarylandError):
    def __init__(self, needed, given):
        super().__init__(f"target time radius {given} cannot hold support radius {needed}")
        self.needed = needed
        self.given = given


class IllConditioned(MarylandError):
    def __init__(self, cond):
        super().__init__(f"restricted linearized operator has condition number {cond:.3e}")
        self.cond = cond


class NoProgress(MarylandError):
    def __init__(self, before, after):
        super().__init__(f"residual did not decrease: {before:.3e} -> {after:.3e}")
        self.before = before
        self.after = after


class DidNotConverge(MarylandError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


class SingularRestriction(MarylandError):
    pass


class HypothesisViolated(MarylandError):
    def __init__(self, failed):
        super().__init__("hypotheses violated: " + ", ".join(failed))
        self.failed = list(failed)


class CoverageGap(MarylandError):
    def __init__(self, site):
        super().__init__(f"no good covering box for site {tuple(site)}")
        self.site = tuple(int(s) for s in site)


class ConfigError(MarylandError):
    """Config validation failure; ``code`` is stable and machine-readable."""

    def __init__(self, code, message):
        super().__init__(f"[{code}] {message}")
        self.code = code


class MissingArtifacts(MarylandError):
    pass


class CorruptArtifact(MarylandError):
    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)

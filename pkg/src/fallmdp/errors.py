"""Exception types raised across the package."""


class FallMdpError(Exception):
    pass


class DegenerateState(FallMdpError):
    pass


class InfeasibleStopper(FallMdpError):
    pass


class ActionOutOfBounds(FallMdpError):
    pass


class DisallowedContact(FallMdpError):
    pass


class NoFeasibleAction(FallMdpError):
    pass


class NoAllowedContact(FallMdpError):
    pass


class DegeneratePrediction(FallMdpError):
    pass


class TopologyMismatch(FallMdpError):
    pass


class MalformedFile(FallMdpError):
    pass


class ConfigInvalid(FallMdpError):
    pass

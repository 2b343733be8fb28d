"""Exception hierarchy shared by all oocmem modules."""


class OocmemError(Exception):
    """Base class for every error raised by the library."""


class ConfigError(OocmemError, ValueError):
    pass


class UnknownHandle(OocmemError, KeyError):
    pass


class HandleStillAdhered(OocmemError):
    pass


class SizeExceedsRamLimit(OocmemError):
    pass


class OutOfMemoryRequest(OocmemError):
    """Pinned data would exceed the RAM limit and overcommit is off."""


class GroupExceedsRamLimit(OocmemError):
    pass


class OutOfSwapSpace(OocmemError):
    pass


class SwapFull(OutOfSwapSpace):
    pass


class IoFailure(OocmemError, OSError):
    pass


# scheduler
class DuplicateRegistration(OocmemError):
    pass


class NotResident(OocmemError):
    pass


class NotSwapped(OocmemError):
    pass


class InsufficientEvictableBytes(OocmemError):
    pass


# swap allocator
class DoubleFree(OocmemError):
    pass


class UnknownSpan(OocmemError):
    pass


# transfer engine
class RamReservationFailed(OocmemError):
    pass


class TransferFailed(OocmemError):
    pass


class WaitImpossible(OocmemError):
    pass

from enum import Enum, IntEnum

BROADCAST = -1


class Priority(str, Enum):
    URGENT = "urgent"
    NORMAL = "normal"
    NONE = "none"


class RadioState(IntEnum):
    SLEEP = 0
    IDLE = 1
    LISTEN = 2
    RECEIVE = 3
    TRANSMIT = 4

    @property
    def listening(self) -> bool:
        return self >= 2 and self != 4

"""
Runtime methods of the reserved "rt::" namespace. They are never declared in
MEX source: the verifier resolves them here and the interpreters execute them
natively.
"""

from collections import namedtuple

from .const import INT, STR, VOID, wrap64

Intrinsic = namedtuple("Intrinsic", ["name", "params", "returns", "func"])

DEVICE_ID = "555-0100"
SIM_SERIAL = "8949-0001"
PASSWORD = "hunter2"
LATITUDE = 52
LONGITUDE = 13


def _emit(name):
    def func(out, *args):
        out(f"{name.split('::', 1)[1]}: {' '.join(str(a) for a in args)}")

    return func


def _net_send(out, message):
    out(f"Net.send: {message}")
    return len(message)


def _wifi_set(out, enabled):
    out(f"Wifi.setEnabled: {enabled}")


_TABLE = [
    ("rt::Telephony.getDeviceId", (), STR, lambda out: DEVICE_ID),
    ("rt::Telephony.getSimSerial", (), STR, lambda out: SIM_SERIAL),
    ("rt::Location.getLatitude", (), INT, lambda out: LATITUDE),
    ("rt::Location.getLongitude", (), INT, lambda out: LONGITUDE),
    ("rt::Account.getPassword", (), STR, lambda out: PASSWORD),
    ("rt::Contacts.read", (INT,), STR, lambda out, i: f"contact-{i}"),
    ("rt::Log.d", (STR,), VOID, _emit("rt::Log.d")),
    ("rt::Net.send", (STR,), INT, _net_send),
    ("rt::Sms.send", (STR, STR), VOID, _emit("rt::Sms.send")),
    ("rt::Wifi.isEnabled", (), INT, lambda out: 1),
    ("rt::Wifi.setEnabled", (INT,), VOID, _wifi_set),
    ("rt::Camera.open", (), INT, lambda out: 1),
    ("rt::Str.length", (STR,), INT, lambda out, s: len(s)),
    ("rt::Str.fromInt", (INT,), STR, lambda out, i: str(i)),
    ("rt::Str.equals", (STR, STR), INT, lambda out, a, b: int(a == b)),
    ("rt::Math.abs", (INT,), INT, lambda out, i: wrap64(abs(i))),
]

# Mapping from "rt::Class.method" to Intrinsic
INTRINSICS = {row[0]: Intrinsic(*row) for row in _TABLE}


def call(name, args, out):
    """
    Execute an intrinsic.

    :param name: intrinsic name, e.g. "rt::Log.d".
    :param args: argument values.
    :param out: callable receiving each line the intrinsic writes.
    :return: the intrinsic result (None for void ones).
    """
    intrinsic = INTRINSICS.get(name)
    if intrinsic is None:
        raise KeyError(f'"{name}" is not a runtime intrinsic.')
    return intrinsic.func(out, *args)

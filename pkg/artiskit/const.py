import enum


class Kind(enum.Enum):
    """
    Instruction kinds of the graph IR.

    Members are named after their role, values are the names used in IR
    dumps (e.g. Kind.ADD is dumped as "HAdd").
    """

    CONST_INT = "HConstInt"
    CONST_STR = "HConstStr"
    ADD = "HAdd"
    SUB = "HSub"
    MUL = "HMul"
    DIV = "HDiv"
    CONCAT = "HConcat"
    PHI = "HPhi"
    IF = "HIf"
    GOTO = "HGoto"
    RETURN = "HReturn"
    RETURN_VOID = "HReturnVoid"
    NEW_INSTANCE = "HNewInstance"
    INSTANCE_GET = "HInstanceGet"
    INSTANCE_SET = "HInstanceSet"
    STATIC_GET = "HStaticGet"
    STATIC_SET = "HStaticSet"
    INVOKE = "HInvoke"
    SPAWN = "HSpawn"
    JOIN = "HJoin"
    PRINT = "HPrint"
    PARAM = "HParam"
    NULL_CHECK = "HNullCheck"
    DIV_ZERO_CHECK = "HDivZeroCheck"
    TAG_SOURCE = "HTagSource"
    TAG_COMBINE = "HTagCombine"
    TAG_CHECK = "HTagCheck"
    TAG_PUSH = "HTagPush"
    TAG_POP = "HTagPop"
    TAG_FIELD_SET = "HTagFieldSet"
    TAG_FIELD_GET = "HTagFieldGet"
    PERM_CHECK = "HPermCheck"
    TRACE = "HTrace"
    # Register copy, only present before SSA conversion
    MOVE = "HMove"

    @classmethod
    def from_name(cls, name):
        try:
            return _KINDS_BY_NAME[name]
        except KeyError:
            raise ValueError(f'"{name}" is not an instruction kind.') from None

    def __str__(self):
        return self.value

    def __repr__(self):
        return self.value


_KINDS_BY_NAME = {kind.value: kind for kind in Kind}


class SinkMode(enum.Enum):
    """
    What a global sink does with a tainted value: REPORT records a leak event,
    HALT records it and terminates the program.
    """

    REPORT = "report"
    HALT = "halt"

    def __str__(self):
        return self.value

    def __repr__(self):
        return self.value


class Grant(enum.Enum):
    ALLOW = "allow"
    DENY = "deny"

    def __bool__(self):
        return self is Grant.ALLOW

    def __str__(self):
        return self.value

    def __repr__(self):
        return self.value


class SinkKind(enum.Enum):
    GLOBAL = "GlobalSink"
    LSI1 = "LSI1"
    LSI2 = "LSI2"
    LSI3 = "LSI3"

    def __str__(self):
        return self.value


class SourceKind(enum.Enum):
    GLOBAL = "GlobalSource"
    LSO1 = "LSO1"
    LSO2 = "LSO2"
    LSO3 = "LSO3"

    def __str__(self):
        return self.value


class _Singleton:
    __instance = None

    def __new__(cls, *args, **kwargs):
        if not cls.__instance:
            cls.__instance = super().__new__(cls)
        return cls.__instance


class _Null(_Singleton):
    """
    The null object reference.
    """

    def __bool__(self):
        return False

    def __eq__(self, o):
        return isinstance(o, _Null)

    def __repr__(self):
        return "null"

    def __hash__(self):
        return hash(None)


# The null reference
null = _Null()


# Scalar types, any other type name designates an object of that class
INT = "int"
STR = "str"
VOID = "void"
TAG = "tag"

PRIMITIVE_TYPES = frozenset({INT, STR, VOID})
TAINTABLE_TYPES = frozenset({INT, STR})

INTRINSIC_PREFIX = "rt::"

# Tags are 64-bit masks
TAG_BITS = 64
ALL_ONES = (1 << TAG_BITS) - 1

HALT_EXIT_STATUS = 42
ERROR_EXIT_STATUS = 1

TERMINATORS = frozenset({Kind.IF, Kind.GOTO, Kind.RETURN, Kind.RETURN_VOID})

# Kinds that optimizations must never delete
SIDE_EFFECTS = frozenset(
    {
        Kind.INVOKE,
        Kind.SPAWN,
        Kind.JOIN,
        Kind.PRINT,
        Kind.PARAM,
        Kind.INSTANCE_SET,
        Kind.STATIC_SET,
        Kind.NULL_CHECK,
        Kind.DIV_ZERO_CHECK,
        Kind.TAG_SOURCE,
        Kind.TAG_COMBINE,
        Kind.TAG_CHECK,
        Kind.TAG_PUSH,
        Kind.TAG_POP,
        Kind.TAG_FIELD_SET,
        Kind.TAG_FIELD_GET,
        Kind.PERM_CHECK,
        Kind.TRACE,
    }
    | TERMINATORS
)

# Kinds allowed to have no input at all
NULLARY = frozenset(
    {
        Kind.PARAM,
        Kind.CONST_INT,
        Kind.CONST_STR,
        Kind.NEW_INSTANCE,
        Kind.STATIC_GET,
        Kind.INVOKE,
        Kind.SPAWN,
        Kind.TAG_SOURCE,
        Kind.TAG_POP,
        Kind.TAG_FIELD_GET,
        Kind.PERM_CHECK,
        Kind.TRACE,
    }
    | TERMINATORS
)

CONSTANTS = frozenset({Kind.CONST_INT, Kind.CONST_STR})

ARITHMETIC = {
    Kind.ADD: "add",
    Kind.SUB: "sub",
    Kind.MUL: "mul",
    Kind.DIV: "div",
}


def is_object_type(type_):
    return type_ not in PRIMITIVE_TYPES and type_ != TAG


def is_taintable(type_):
    return type_ in TAINTABLE_TYPES


def is_intrinsic(method):
    """
    Tell whether given method name ("Class.method") lives in the runtime
    namespace.
    """
    return str(method).startswith(INTRINSIC_PREFIX)


def wrap64(value):
    """
    Wrap an integer to the signed 64-bit range.
    """
    value &= ALL_ONES
    return value - (1 << TAG_BITS) if value >> (TAG_BITS - 1) else value


def divide(a, b):
    """
    Signed 64-bit division truncating toward zero.

    :param a: dividend.
    :param b: divisor, nonzero.
    :return: the wrapped quotient.
    """
    quotient = abs(a) // abs(b)
    return wrap64(quotient if (a < 0) == (b < 0) else -quotient)


def combine(a, b):
    """
    Union of two taint tags.
    """
    return (a | b) & ALL_ONES


def default_value(type_):
    """
    Value a register or field of given type holds before any assignment, and
    the value a denied protected call yields.
    """
    if type_ == INT:
        return 0
    elif type_ == STR:
        return ""
    elif type_ == VOID:
        return None
    return null

"""Exception types raised across the package."""


class DPFedBankError(Exception):
    pass


class EmptyBatch(DPFedBankError, ValueError):
    pass


class EmptyShard(DPFedBankError, ValueError):
    pass


class InfeasiblePartition(DPFedBankError, ValueError):
    pass


class DimensionMismatch(DPFedBankError, ValueError):
    pass


class BudgetExhausted(DPFedBankError):
    def __init__(self, client_id):
        super().__init__(f"privacy budget exhausted for client {client_id}")
        self.client_id = client_id


class EmptyUpdateSet(DPFedBankError, ValueError):
    pass


class RuleInfeasible(DPFedBankError, ValueError):
    pass


class EmptyEligibleSet(DPFedBankError, ValueError):
    pass


class NoParticipants(DPFedBankError):
    pass


class ConfigInvalid(DPFedBankError, ValueError):
    """Configuration rejected; ``field`` is the dotted path of the offending key."""

    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason

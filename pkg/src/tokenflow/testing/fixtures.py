"""Fixture contracts modeled on known attack shapes, with the chain state they need.

Each fixture carries the runtime code of the analyzed contract, a resolver
holding the storage and code of every contract it touches, and the verdict the
detector is expected to reach, as ``(kind, rule)`` pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from tokenflow.resolver import FixtureResolver
from tokenflow.testing.builder import (
    CALLER,
    SELF,
    TIMESTAMP,
    Arg,
    Array,
    Call,
    Contract,
    ExtCodeSize,
    Function,
    Halt,
    If,
    Invoke,
    Local,
    Options,
    Require,
    Assign,
    Sload,
    StorageArray,
    While,
    storage_array_slot,
)

# well-known actors (arbitrary 160-bit values)
ATTACKER = 0xA77AC000000000000000000000000000000A11CE
ROUTER = 0x10ED43C718714EB63D5AA57B78B54704E256024E
BUSDT = 0x55D398326F99059FF775485246999027B3197955
BUSD = 0xE9E7CEA3DEDCA5984780BAFC599BD69ADD087D56
ULME = 0xAE975A25646E6EB859615D0A147B909C13D31FED
UPS = 0x3DA4828640AD831F3301A4597821CDE99589ABA9
WETH = 0xC02AAA39B223FE8D0A0E5C4F27EAD9083C756CC2
CHEESE = 0x68CFB82EACB9F198D508B514D898A403C449533E
VICTIM_ROUTER = 0x7A250D5630B4CF539739DF2C5DACB4C659F2488D
HOLDER = 0x0D7CAB9F2B5F3E1C6A2E4F5A6B7C8D9E0F1A2B3C
PAIR = 0x16B9A82891338F9BA80E2D6970FDDA79D1EB0DAE
TREASURY = 0x4F3A120E72C76C22AE802D129F599BFDBC31CB81
USDT = 0xDAC17F958D2EE523A2206206994597C13D831EC7
REWARD = 0x6B175474E89094C44DA98B954EEDEAC495271D0F
DISTRIBUTOR = 0x9E6A2E4B3C1D0F1E2D3C4B5A69788796A5B4C3D2
HELPER = 0x00000000000000000000000000000000DEADBEEF
USERS = (0x1111111111111111111111111111111111111111, 0x2222222222222222222222222222222222222222)

SWAP = "swapExactTokensForTokens(uint256,uint256,address[],address,uint256)"
BALANCE = "balanceOf(address)"
ALLOWANCE = "allowance(address,address)"
TRANSFER = "transfer(address,uint256)"
TRANSFER_FROM = "transferFrom(address,address,uint256)"
BUY_MINER = "buyMiner(address,uint256)"


@dataclass
class Fixture:
    name: str
    code: bytes
    address: int
    resolver: FixtureResolver
    expected: frozenset[tuple[str, str]] = frozenset()
    notes: str = ""
    options: Options = field(default_factory=Options)

    @property
    def is_attack(self) -> bool:
        return bool(self.expected)


def _state(address: int, storage: dict[int, int], code: bytes, extra_code: dict[int, bytes] | None = None,
           extra_storage: dict[int, dict[int, int]] | None = None) -> FixtureResolver:
    r = FixtureResolver(code={address: code, **(extra_code or {})}, storage={address: storage})
    r.storage.update(extra_storage or {})
    return r


# -- ULME ---------------------------------------------------------------------


def ulme_victim(options: Options | None = None) -> bytes:
    """Token contract whose buyMiner pulls BUSDT from the named user into the pool router."""
    return Contract(
        functions=[
            Function(BUY_MINER, [Call(Sload(2), TRANSFER_FROM, [Arg(0), Sload(3), Arg(1)], {"ok": 0}), Halt()]),
            Function(BALANCE, [Halt("RETURN")]),
        ]
    ).compile(options)


def ulme_attack_contract(options: Options | None = None, *, extra_helpers: int = 0) -> Contract:
    attack = [
        If(Sload(0xA), [
            Call(Sload(4), SWAP, [Sload(0xA), 0, Array([Sload(2), Sload(5)]), SELF, TIMESTAMP + 1000]),
        ]),
        Assign("i", 0),
        While(Local("i").lt(Sload(9)), [
            Call(Sload(2), ALLOWANCE, [StorageArray(9, Local("i")), Sload(5)], {"allowed": 0}),
            If(Local("allowed"), [
                Call(Sload(2), BALANCE, [StorageArray(9, Local("i"))], {"bal": 0}),
                If(Local("bal").gt(0), [
                    Require(ExtCodeSize(Sload(5))),
                    Call(Sload(5), BUY_MINER, [StorageArray(9, Local("i")), Local("bal") * 100 // 110]),
                ]),
            ]),
            Assign("i", Local("i") + 1),
        ]),
        Call(Sload(5), BALANCE, [SELF], {"got": 0}),
        Call(Sload(4), SWAP, [Local("got"), 0, Array([Sload(5), Sload(2)]), SELF, TIMESTAMP + 1000]),
    ]
    functions = [Function("pancakeCall(address,uint256,uint256,bytes)", [Invoke("attack"), Halt()])]
    for k in range(extra_helpers):
        # off-path maintenance calls into a contract with code: never on a sensitive path
        functions.append(Function(f"poke{k}(uint256)", [
            Call(HELPER, f"ping{k}(uint256)", [Arg(0)]), Halt(),
        ]))
    return Contract(functions=functions, privates={"attack": attack})


def helper_code(n: int, options: Options | None = None) -> bytes:
    """Contract with ``n`` ping functions that each make a few unlabeled calls."""
    fns = []
    for k in range(n):
        body = [Call(Sload(k + 1), f"sync{j}(uint256)", [Arg(0) + j]) for j in range(4)]
        fns.append(Function(f"ping{k}(uint256)", [*body, Halt()]))
    return Contract(functions=fns).compile(options)


def ulme(options: Options | None = None, *, extra_helpers: int = 0) -> Fixture:
    code = ulme_attack_contract(options, extra_helpers=extra_helpers).compile(options)
    base = storage_array_slot(9)
    storage = {2: BUSDT, 4: ROUTER, 5: ULME, 0xA: 10**21, 9: len(USERS)}
    storage.update({base + i: u for i, u in enumerate(USERS)})
    extra_code = {ULME: ulme_victim(options), BUSDT: b"\x00", ROUTER: b"\x00"}
    extra_storage = {ULME: {2: BUSDT, 3: ROUTER}}
    if extra_helpers:
        extra_code[HELPER] = helper_code(extra_helpers, options)
        extra_storage[HELPER] = {k + 1: HELPER for k in range(extra_helpers)}
    return Fixture(
        "ulme", code, ATTACKER, _state(ATTACKER, storage, code, extra_code, extra_storage),
        frozenset({("DPM", "1+3")}), "victim buyMiner moves BUSDT from users into the pool", options or Options(),
    )


# -- UPS ----------------------------------------------------------------------


def ups(options: Options | None = None) -> Fixture:
    body = [
        Call(BUSD, BALANCE, [SELF], {"v1": 0}),
        Call(Sload(2), SWAP, [Local("v1"), 1, Array([BUSD, UPS]), SELF, TIMESTAMP], {"v2": 0}),
        Call(UPS, BALANCE, [Sload(0)], {"v4": 0}),
        Call(UPS, TRANSFER_FROM, [Sload(0), SELF, Local("v4")], {"ok": 0}),
        Call(UPS, BALANCE, [Sload(5)], {"v5": 0}),
        Call(Sload(2), SWAP, [(Local("v5") - 1) * 20 // 19, 1, Array([UPS, BUSD]), SELF, TIMESTAMP], {"v7": 0}),
        Call(BUSD, TRANSFER, [Sload(9), Arg(1) + 1000], {"ok": 0}),
        Call(BUSD, BALANCE, [SELF], {"v9": 0}),
        Call(BUSD, TRANSFER, [CALLER, Local("v9")], {"ok": 0}),
        Halt(),
    ]
    code = Contract(functions=[Function("pancakeV3FlashCallback(uint256,uint256,bytes)", body)]).compile(options)
    storage = {0: HOLDER, 2: ROUTER, 5: PAIR, 9: TREASURY}
    return Fixture("ups", code, ATTACKER, _state(ATTACKER, storage, code), frozenset({("IPM", "1+4")}),
                   "transferFrom of UPS held by a third party between the two swaps", options or Options())


# -- swapTokenForFund (accepted false positive) -------------------------------------


def swap_token_for_fund(options: Options | None = None) -> Fixture:
    token = 0x8F0A1B2C3D4E5F60718293A4B5C6D7E8F9012345
    fund = [
        Call(Sload(1), SWAP, [Arg(0), 0, Array([SELF, Sload(2)]), Sload(3), TIMESTAMP]),
        Call(Sload(2), BALANCE, [Sload(3)], {"usdtBalance": 0}),
        Call(Sload(2), TRANSFER_FROM, [Sload(3), SELF, Local("usdtBalance")], {"ok": 0}),
        Assign("reward", Local("usdtBalance") - Local("usdtBalance") // 3),
        If(Local("reward").gt(0), [
            Call(Sload(1), SWAP, [Local("reward"), 0, Array([Sload(2), Sload(4)]), SELF, TIMESTAMP]),
        ]),
    ]
    code = Contract(
        functions=[
            Function(TRANSFER, [Invoke("swapTokenForFund"), Halt("RETURN")]),
            Function(BALANCE, [Halt("RETURN")]),
        ],
        privates={"swapTokenForFund": fund},
    ).compile(options)
    storage = {1: ROUTER, 2: USDT, 3: DISTRIBUTOR, 4: REWARD}
    return Fixture("swap_token_for_fund", code, token, _state(token, storage, code), frozenset({("IPM", "1+4")}),
                   "benign fee-swapping token; one IPM is the accepted false alarm", options or Options())


# -- synthetic DPM via flashloan (rule 2) ------------------------------------------


def flashloan_dpm(options: Options | None = None) -> Fixture:
    token_b = 0xB0B0000000000000000000000000000000000B0B
    body = [
        Call(Sload(1), SWAP, [Arg(1), 0, Array([Arg(0), token_b]), SELF, TIMESTAMP]),
        Call(token_b, BALANCE, [SELF], {"b": 0}),
        Call(Sload(1), SWAP, [Local("b"), 0, Array([token_b, Arg(0)]), SELF, TIMESTAMP]),
        Call(Arg(0), TRANSFER, [CALLER, Arg(1) + Arg(2)], {"ok": 0}),
        Halt("RETURN"),
    ]
    code = Contract(
        functions=[Function("executeOperation(address,uint256,uint256,address,bytes)", body)]
    ).compile(options)
    return Fixture("flashloan_dpm", code, ATTACKER, _state(ATTACKER, {1: ROUTER}, code), frozenset({("DPM", "1+2")}),
                   "borrowed asset is swapped out and back through one router", options or Options())


# -- Cheese Bank shape (IPM through liquidity) -------------------------------------


def cheese(options: Options | None = None) -> Fixture:
    add = "addLiquidity(address,address,uint256,uint256,uint256,uint256,address,uint256)"
    remove = "removeLiquidity(address,address,uint256,uint256,uint256,address,uint256)"
    body = [
        Call(WETH, BALANCE, [SELF], {"w": 0}),
        Call(Sload(1), SWAP, [Local("w") // 2, 0, Array([WETH, CHEESE]), SELF, TIMESTAMP]),
        Call(CHEESE, BALANCE, [SELF], {"c": 0}),
        Call(Sload(3), add, [WETH, CHEESE, Local("w") // 2, Local("c") // 2, 0, 0, SELF, TIMESTAMP],
             {"liq": 2}, out_words=3),
        Call(CHEESE, BALANCE, [SELF], {"c2": 0}),
        Call(Sload(1), SWAP, [Local("c2"), 0, Array([CHEESE, WETH]), SELF, TIMESTAMP]),
        Call(Sload(3), remove, [WETH, CHEESE, Local("liq"), 0, 0, SELF, TIMESTAMP]),
        Call(WETH, TRANSFER, [CALLER, Arg(2)], {"ok": 0}),
        Halt(),
    ]
    code = Contract(functions=[Function("uniswapV2Call(address,uint256,uint256,bytes)", body)]).compile(options)
    storage = {1: ROUTER, 3: VICTIM_ROUTER}
    return Fixture("cheese", code, ATTACKER, _state(ATTACKER, storage, code), frozenset({("IPM", "1+4")}),
                   "liquidity added to a victim-priced pool between the two swaps", options or Options())


# -- benign --------------------------------------------------------------------


def erc20(options: Options | None = None) -> Fixture:
    token = 0xE2C20000000000000000000000000000000E2C20
    code = Contract(
        functions=[
            Function(TRANSFER, [Halt("RETURN")]),
            Function(BALANCE, [Halt("RETURN")]),
            Function("approve(address,uint256)", [Halt("RETURN")]),
        ]
    ).compile(options)
    return Fixture("erc20", code, token, _state(token, {}, code), frozenset(), "plain token, no external calls",
                   options or Options())


def vault(options: Options | None = None) -> Fixture:
    """Deposit/withdraw vault: transfers and one swap, never a pump-and-dump pair."""
    addr = 0x7A017000000000000000000000000000000A0170
    code = Contract(
        functions=[
            Function("deposit(uint256)", [
                Call(Sload(1), TRANSFER_FROM, [CALLER, SELF, Arg(0)], {"ok": 0}), Halt()]),
            Function("withdraw(uint256)", [
                Call(Sload(1), TRANSFER, [CALLER, Arg(0)], {"ok": 0}), Halt()]),
            Function("harvest()", [
                Call(Sload(2), BALANCE, [SELF], {"r": 0}),
                Call(Sload(3), SWAP, [Local("r"), 0, Array([Sload(2), Sload(1)]), SELF, TIMESTAMP]),
                Halt()]),
        ]
    ).compile(options)
    return Fixture("vault", code, addr, _state(addr, {1: USDT, 2: REWARD, 3: ROUTER}, code), frozenset(),
                   "yield vault; a single compounding swap", options or Options())


def arbitrage(options: Options | None = None) -> Fixture:
    """Two swaps through different routers: no shared pool, so no pump-and-dump."""
    addr = 0xA4B1000000000000000000000000000000000A4B
    body = [
        Call(WETH, BALANCE, [SELF], {"w": 0}),
        Call(Sload(1), SWAP, [Local("w"), 0, Array([WETH, USDT]), SELF, TIMESTAMP]),
        Call(USDT, BALANCE, [SELF], {"u": 0}),
        Call(Sload(2), SWAP, [Local("u"), 0, Array([USDT, WETH]), SELF, TIMESTAMP]),
        Halt(),
    ]
    code = Contract(functions=[Function("run()", body)]).compile(options)
    return Fixture("arbitrage", code, addr, _state(addr, {1: ROUTER, 2: VICTIM_ROUTER}, code), frozenset(),
                   "cross-venue arbitrage", options or Options())


# -- size scaling ----------------------------------------------------------------


def scaled_attack(n: int, options: Options | None = None) -> Fixture:
    """``n`` independent UPS-shaped callbacks in one contract: code size grows linearly in ``n``."""
    fns = []
    for k in range(n):
        body = [
            Call(BUSD, BALANCE, [SELF], {"v1": 0}),
            Call(Sload(2), SWAP, [Local("v1") - k, 1, Array([BUSD, UPS]), SELF, TIMESTAMP], {"v2": 0}),
            Call(UPS, BALANCE, [Sload(0)], {"v4": 0}),
            Call(UPS, TRANSFER_FROM, [Sload(0), SELF, Local("v4")], {"ok": 0}),
            Call(UPS, BALANCE, [SELF], {"v5": 0}),
            Call(Sload(2), SWAP, [Local("v5") * 20 // 19 + k, 1, Array([UPS, BUSD]), SELF, TIMESTAMP], {"v7": 0}),
            Call(BUSD, TRANSFER, [CALLER, Arg(0)], {"ok": 0}),
            Halt(),
        ]
        fns.append(Function(f"strike{k}(uint256)", body))
    code = Contract(functions=fns).compile(options)
    storage = {0: HOLDER, 2: ROUTER}
    return Fixture(f"scaled_{n}", code, ATTACKER, _state(ATTACKER, storage, code), frozenset({("IPM", "1+4")}),
                   f"{n} copies of an indirect-manipulation body", options or Options())


ATTACKS = (ulme, ups, flashloan_dpm, cheese, swap_token_for_fund)
BENIGN = (erc20, vault, arbitrage)


def corpus(options: Options | None = None) -> list[Fixture]:
    return [f(options) for f in (*ATTACKS, *BENIGN)]

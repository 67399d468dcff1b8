//! Named template algebras used throughout tests, benches and the CLI.

use crate::algebra::{FiniteAlgebra, OperationTable};
use crate::types::Elem;

/// Majority on `{0,1}`.
pub fn maj3() -> FiniteAlgebra {
    FiniteAlgebra::full(OperationTable::from_fn(2, 3, |t| {
        if t[0] == t[1] || t[0] == t[2] {
            t[0]
        } else {
            t[1]
        }
    }))
}

/// `x+y+z mod 2`.
pub fn affine() -> FiniteAlgebra {
    FiniteAlgebra::full(OperationTable::from_fn(2, 3, |t| t[0] ^ t[1] ^ t[2]))
}

/// `x∧y∧z` on `{0,1}`.
pub fn semilattice() -> FiniteAlgebra {
    FiniteAlgebra::full(OperationTable::from_fn(2, 3, |t| t[0] & t[1] & t[2]))
}

/// Rock-paper-scissors on `{0,1,2}`: the winner of a pair, `x+1` beating `x`.
pub fn rps() -> FiniteAlgebra {
    FiniteAlgebra::full(OperationTable::from_fn(3, 2, |t| rps_winner(t[0], t[1])))
}

fn rps_winner(x: Elem, y: Elem) -> Elem {
    if x == y || (x + 1) % 3 == y {
        y
    } else {
        x
    }
}

/// `x₁+x₂+x₃+x₄ mod 3`.
pub fn z3_sum() -> FiniteAlgebra {
    FiniteAlgebra::full(OperationTable::from_fn(3, 4, |t| (t.iter().map(|&a| a as u32).sum::<u32>() % 3) as Elem))
}

/// Median on the chain `0 < 1 < 2`.
pub fn median3() -> FiniteAlgebra {
    FiniteAlgebra::full(OperationTable::from_fn(3, 3, |t| {
        let mut s = [t[0], t[1], t[2]];
        s.sort_unstable();
        s[1]
    }))
}

/// `Z₂×Z₂` under coordinatewise `x+y+z`; element `a` has coordinates `(a>>1, a&1)`.
pub fn z2xz2() -> FiniteAlgebra {
    FiniteAlgebra::full(OperationTable::from_fn(4, 3, |t| t[0] ^ t[1] ^ t[2]))
}

/// Fixture lookup by name.
pub fn by_name(name: &str) -> Option<FiniteAlgebra> {
    Some(match name {
        "maj3" => maj3(),
        "affine" => affine(),
        "semilattice" => semilattice(),
        "rps" => rps(),
        "z3" => z3_sum(),
        "median3" => median3(),
        "z2xz2" => z2xz2(),
        _ => return None,
    })
}

pub const NAMES: [&str; 7] = ["maj3", "affine", "semilattice", "rps", "z3", "median3", "z2xz2"];

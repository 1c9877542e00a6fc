//! Grammar-level SMILES checks (no chemistry, no canonicalization).

/// Characters that may appear anywhere in an accepted SMILES string.
const ALPHABET: &str = "BCNOPSFIclnospbrhaegkiutdmzwvyfxRHAEGKLMTUZWVYXD0123456789=#-+/\\()[]@%.:*$";

fn is_bond(c: char) -> bool {
    matches!(c, '=' | '#' | '-' | '/' | '\\' | '$' | ':')
}

/// `true` iff `smiles` passes every structural check: non-empty, drawn from
/// the SMILES alphabet, balanced `()` and `[]`, each ring-closure digit used
/// an even number of times, and no two consecutive bond symbols.
///
/// Digits inside bracket atoms (isotopes, charges, H counts) and `%nn`
/// two-digit ring labels are handled separately from single-digit closures.
pub fn validate_smiles(smiles: &str) -> bool {
    if smiles.is_empty() {
        return false;
    }
    let chars: Vec<char> = smiles.chars().collect();
    if chars.iter().any(|c| !ALPHABET.contains(*c)) {
        return false;
    }
    let mut paren_depth = 0i32;
    let mut in_bracket = false;
    let mut ring_counts = [0u32; 10];
    let mut long_rings = std::collections::HashMap::<u32, u32>::new();
    let mut prev_bond = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let bond = !in_bracket && is_bond(c);
        if bond && prev_bond {
            return false;
        }
        prev_bond = bond;
        match c {
            '[' => {
                if in_bracket {
                    return false;
                }
                in_bracket = true;
            }
            ']' => {
                if !in_bracket {
                    return false;
                }
                in_bracket = false;
            }
            '(' if !in_bracket => paren_depth += 1,
            ')' if !in_bracket => {
                paren_depth -= 1;
                if paren_depth < 0 {
                    return false;
                }
            }
            '%' if !in_bracket => {
                let (Some(a), Some(b)) = (
                    chars.get(i + 1).and_then(|c| c.to_digit(10)),
                    chars.get(i + 2).and_then(|c| c.to_digit(10)),
                ) else {
                    return false;
                };
                *long_rings.entry(a * 10 + b).or_default() += 1;
                i += 2;
            }
            d if !in_bracket && d.is_ascii_digit() => {
                ring_counts[d.to_digit(10).expect("digit") as usize] += 1;
            }
            _ => {}
        }
        i += 1;
    }
    paren_depth == 0 && !in_bracket && ring_counts.iter().all(|n| n % 2 == 0) && long_rings.values().all(|n| n % 2 == 0)
}

//! The original Porter (1980) suffix-stripping algorithm.
//!
//! This is the algorithm exactly as published, without the later departures
//! found in Martin Porter's reference implementation (`bli`, `logi`, the
//! two-letter guard) and without the Porter2 / Snowball revisions. Input must
//! already be lowercase ASCII; callers route every other token around it.

/// Stems a lowercase ASCII word. Words with any other character are returned
/// unchanged.
pub fn stem(word: &str) -> String {
    if word.is_empty() || !word.bytes().all(|b| b.is_ascii_lowercase()) {
        return word.to_owned();
    }
    let mut w = word.as_bytes().to_vec();
    step1a(&mut w);
    step1b(&mut w);
    step1c(&mut w);
    step2(&mut w);
    step3(&mut w);
    step4(&mut w);
    step5a(&mut w);
    step5b(&mut w);
    // only ASCII bytes were ever written
    String::from_utf8(w).expect("porter output is ascii")
}

type Condition = fn(&[u8]) -> bool;

fn is_vowel(b: u8) -> bool {
    matches!(b, b'a' | b'e' | b'i' | b'o' | b'u')
}

/// Consonant flag per position. `y` is a consonant at the start of a word or
/// after a vowel.
fn consonant_flags(w: &[u8]) -> Vec<bool> {
    let mut flags: Vec<bool> = Vec::with_capacity(w.len());
    for (i, &b) in w.iter().enumerate() {
        let cons = if is_vowel(b) {
            false
        } else if b == b'y' {
            i == 0 || !flags[i - 1]
        } else {
            true
        };
        flags.push(cons);
    }
    flags
}

fn is_consonant(w: &[u8], i: usize) -> bool {
    consonant_flags(&w[..=i])[i]
}

/// m in `[C](VC){m}[V]`.
fn measure(w: &[u8]) -> usize {
    let flags = consonant_flags(w);
    flags.windows(2).filter(|p| !p[0] && p[1]).count()
}

fn positive_measure(w: &[u8]) -> bool {
    measure(w) > 0
}

fn measure_gt_1(w: &[u8]) -> bool {
    measure(w) > 1
}

fn contains_vowel(w: &[u8]) -> bool {
    consonant_flags(w).iter().any(|c| !c)
}

fn ends_double_consonant(w: &[u8]) -> bool {
    let n = w.len();
    n >= 2 && w[n - 1] == w[n - 2] && is_consonant(w, n - 1)
}

/// `*o`: ends consonant-vowel-consonant, final consonant not w, x or y.
fn ends_cvc(w: &[u8]) -> bool {
    let n = w.len();
    if n < 3 {
        return false;
    }
    let flags = consonant_flags(w);
    flags[n - 3] && !flags[n - 2] && flags[n - 1] && !matches!(w[n - 1], b'w' | b'x' | b'y')
}

/// Applies the first rule whose suffix matches. A matching suffix whose
/// condition fails stops the scan and leaves the word untouched.
fn apply_rules(w: &mut Vec<u8>, rules: &[(&str, &str, Option<Condition>)]) {
    for &(suffix, replacement, condition) in rules {
        if w.ends_with(suffix.as_bytes()) {
            let stem_len = w.len() - suffix.len();
            if condition.map_or(true, |c| c(&w[..stem_len])) {
                w.truncate(stem_len);
                w.extend_from_slice(replacement.as_bytes());
            }
            return;
        }
    }
}

fn step1a(w: &mut Vec<u8>) {
    apply_rules(
        w,
        &[("sses", "ss", None), ("ies", "i", None), ("ss", "ss", None), ("s", "", None)],
    );
}

fn step1b(w: &mut Vec<u8>) {
    if w.ends_with(b"eed") {
        if positive_measure(&w[..w.len() - 3]) {
            w.truncate(w.len() - 1);
        }
        return;
    }
    let mut stripped = false;
    for suffix in [&b"ed"[..], &b"ing"[..]] {
        if w.ends_with(suffix) && contains_vowel(&w[..w.len() - suffix.len()]) {
            w.truncate(w.len() - suffix.len());
            stripped = true;
            break;
        }
    }
    if !stripped {
        return;
    }
    if w.ends_with(b"at") || w.ends_with(b"bl") || w.ends_with(b"iz") {
        w.push(b'e');
    } else if ends_double_consonant(w) {
        if !matches!(w[w.len() - 1], b'l' | b's' | b'z') {
            w.pop();
        }
    } else if measure(w) == 1 && ends_cvc(w) {
        w.push(b'e');
    }
}

fn step1c(w: &mut Vec<u8>) {
    if w.ends_with(b"y") && contains_vowel(&w[..w.len() - 1]) {
        let n = w.len();
        w[n - 1] = b'i';
    }
}

fn step2(w: &mut Vec<u8>) {
    let c = Some(positive_measure as Condition);
    apply_rules(
        w,
        &[
            ("ational", "ate", c),
            ("tional", "tion", c),
            ("enci", "ence", c),
            ("anci", "ance", c),
            ("izer", "ize", c),
            ("abli", "able", c),
            ("alli", "al", c),
            ("entli", "ent", c),
            ("eli", "e", c),
            ("ousli", "ous", c),
            ("ization", "ize", c),
            ("ation", "ate", c),
            ("ator", "ate", c),
            ("alism", "al", c),
            ("iveness", "ive", c),
            ("fulness", "ful", c),
            ("ousness", "ous", c),
            ("aliti", "al", c),
            ("iviti", "ive", c),
            ("biliti", "ble", c),
        ],
    );
}

fn step3(w: &mut Vec<u8>) {
    let c = Some(positive_measure as Condition);
    apply_rules(
        w,
        &[
            ("icate", "ic", c),
            ("ative", "", c),
            ("alize", "al", c),
            ("iciti", "ic", c),
            ("ical", "ic", c),
            ("ful", "", c),
            ("ness", "", c),
        ],
    );
}

fn ion_condition(stem: &[u8]) -> bool {
    measure_gt_1(stem) && matches!(stem.last(), Some(b's' | b't'))
}

fn step4(w: &mut Vec<u8>) {
    let c = Some(measure_gt_1 as Condition);
    apply_rules(
        w,
        &[
            ("al", "", c),
            ("ance", "", c),
            ("ence", "", c),
            ("er", "", c),
            ("ic", "", c),
            ("able", "", c),
            ("ible", "", c),
            ("ant", "", c),
            ("ement", "", c),
            ("ment", "", c),
            ("ent", "", c),
            ("ion", "", Some(ion_condition as Condition)),
            ("ou", "", c),
            ("ism", "", c),
            ("ate", "", c),
            ("iti", "", c),
            ("ous", "", c),
            ("ive", "", c),
            ("ize", "", c),
        ],
    );
}

fn step5a(w: &mut Vec<u8>) {
    if w.ends_with(b"e") {
        let stem = &w[..w.len() - 1];
        let m = measure(stem);
        if m > 1 || (m == 1 && !ends_cvc(stem)) {
            w.pop();
        }
    }
}

fn step5b(w: &mut Vec<u8>) {
    if w.ends_with(b"ll") && measure(&w[..w.len() - 1]) > 1 {
        w.pop();
    }
}

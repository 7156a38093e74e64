use lexbridge::tokenizer::stem;

#[test]
fn matches_reference_vectors() {
    let data = include_str!("data/porter_vectors.tsv");
    let mut mismatches = Vec::new();
    let mut total = 0;
    for line in data.lines().filter(|l| !l.is_empty()) {
        let (word, expected) = line.split_once('\t').expect("word<TAB>stem");
        total += 1;
        let got = stem(word);
        if got != expected {
            mismatches.push(format!("{word}: expected {expected}, got {got}"));
        }
    }
    assert!(total > 2000, "vector file truncated ({total} lines)");
    assert!(mismatches.is_empty(), "{} of {total} differ:\n{}", mismatches.len(), mismatches.join("\n"));
}

use thinkfirst_core::{parse_transcript, render_transcript, CotResult};

fn load(name: &str) -> CotResult {
    let path = format!("{}/fixtures/transcripts/{name}.txt", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap();
    parse_transcript(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn stick_insect() {
    let r = load("stick_insect");
    assert_eq!(r.pairs.len(), 7);
    assert!(r.summary.starts_with("The image shows a dark, lush forest setting"));
    assert!(r.summary.ends_with("making the insect difficult to spot."));
    assert_eq!(r.pseudo_prompt, None);
}

#[test]
fn living_room() {
    let r = load("living_room");
    assert_eq!(r.pairs.len(), 7);
    assert!(r.summary.starts_with("The image showcases a modern living room"));
    assert!(r.summary.ends_with("revealing an autumn landscape outside."));
    assert_eq!(r.pseudo_prompt, None);
}

#[test]
fn chair_with_prompt() {
    let r = load("chair");
    assert_eq!(r.pairs.len(), 6);
    assert!(r.summary.starts_with("The image features a modern, minimalist orange chair"));
    assert_eq!(
        r.pseudo_prompt.as_deref(),
        Some("The image features a modern, minimalist chair with a sleek, curvy design. Please segment the upper left section of the backrest in the image.")
    );
}

#[test]
fn flatfish_dashed_style() {
    let r = load("flatfish");
    assert_eq!(r.pairs.len(), 6);
    assert!(r.summary.starts_with("The image showcases an underwater sandy environment"));
    assert!(r.summary.contains("camouflaged flatfish"));
}

#[test]
fn waldo_prompt() {
    let r = load("waldo");
    assert_eq!(
        r.pseudo_prompt.as_deref(),
        Some("Please segment the boy in the red and white striped shirt near the tent.")
    );
}

#[test]
fn pairs_are_numbered_and_valid() {
    for name in ["stick_insect", "living_room", "chair", "flatfish", "waldo"] {
        let r = load(name);
        r.validate().unwrap();
        for (i, p) in r.pairs.iter().enumerate() {
            assert_eq!(p.index as usize, i + 1);
            assert!(!p.question.contains("**"), "{name}: {}", p.question);
        }
    }
}

#[test]
fn render_then_parse_is_identity() {
    for name in ["stick_insect", "living_room", "chair", "flatfish", "waldo"] {
        let r = load(name);
        let rendered = render_transcript(&r);
        let back = parse_transcript(&rendered).unwrap();
        assert!(back.same_content(&r), "{name} changed on roundtrip:\n{rendered}");
        // rendering is stable
        assert_eq!(render_transcript(&back), rendered);
    }
}

#[test]
fn rendered_prompt_is_last_line() {
    let rendered = render_transcript(&load("chair"));
    assert!(rendered
        .lines()
        .last()
        .unwrap()
        .starts_with("- Prompt: The image features a modern, minimalist chair"));
}

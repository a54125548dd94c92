//! The fixed 64-token vocabulary.
//!
//! | ids     | tokens                                                  |
//! |---------|---------------------------------------------------------|
//! | 0–11    | `<pad> <bos> <eos> yes no ? is present describe ask , there` |
//! | 12–15   | colors: `red green blue yellow`                         |
//! | 16–35   | 20 object names                                         |
//! | 36–63   | `<unused0>` … `<unused27>`                              |

pub const VOCAB_SIZE: usize = 64;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const YES: usize = 3;
pub const NO: usize = 4;
pub const QMARK: usize = 5;
pub const IS: usize = 6;
pub const PRESENT: usize = 7;
pub const DESCRIBE: usize = 8;
pub const ASK: usize = 9;
pub const COMMA: usize = 10;
pub const THERE: usize = 11;

pub const COLOR_BASE: usize = 12;
pub const COLOR_NAMES: [&str; 4] = ["red", "green", "blue", "yellow"];

pub const OBJECT_BASE: usize = 16;
pub const OBJECT_NAMES: [&str; 20] = [
    "cup", "saucer", "fork", "knife", "dog", "leash", "pen", "paper", "bread", "butter", "lamp", "chair",
    "ball", "kite", "boat", "clock", "shoe", "book", "plant", "bike",
];

const SPECIAL: [&str; 12] = [
    "<pad>", "<bos>", "<eos>", "yes", "no", "?", "is", "present", "describe", "ask", ",", "there",
];

pub fn object_token(object_type: usize) -> usize {
    OBJECT_BASE + object_type
}

pub fn color_token(attr: usize) -> usize {
    COLOR_BASE + attr
}

/// Object type named by a token id, if it is an object token.
pub fn token_object(id: usize) -> Option<usize> {
    (OBJECT_BASE..OBJECT_BASE + OBJECT_NAMES.len())
        .contains(&id)
        .then(|| id - OBJECT_BASE)
}

pub fn token_str(id: usize) -> String {
    match id {
        0..=11 => SPECIAL[id].to_string(),
        12..=15 => COLOR_NAMES[id - COLOR_BASE].to_string(),
        16..=35 => OBJECT_NAMES[id - OBJECT_BASE].to_string(),
        36..=63 => format!("<unused{}>", id - 36),
        _ => format!("<oov{id}>"),
    }
}

pub fn decode(ids: &[usize]) -> String {
    ids.iter().map(|&i| token_str(i)).collect::<Vec<_>>().join(" ")
}

/// Text prompt that precedes the visual block in question answering.
pub const QA_PROMPT: [usize; 2] = [BOS, ASK];
/// Text prompt that precedes the visual block in captioning.
pub const CAPTION_PROMPT: [usize; 2] = [BOS, DESCRIBE];

/// `is <object> present ?`
pub fn question(object_type: usize) -> Vec<usize> {
    vec![IS, object_token(object_type), PRESENT, QMARK]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_is_complete_and_unique() {
        let all: Vec<String> = (0..VOCAB_SIZE).map(token_str).collect();
        let mut dedup = all.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), VOCAB_SIZE);
        assert_eq!(token_str(YES), "yes");
        assert_eq!(token_str(NO), "no");
        assert_eq!(decode(&question(0)), "is cup present ?");
    }

    #[test]
    fn object_tokens_round_trip() {
        for t in 0..OBJECT_NAMES.len() {
            assert_eq!(token_object(object_token(t)), Some(t));
        }
        assert_eq!(token_object(YES), None);
    }
}

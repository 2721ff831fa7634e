//! Fifty synthetic annotator replies and the score each should yield.
//! `None` means the reply must be quarantined as unparseable.

use webcurate::quality::parse_score;
use webcurate::Error;

const FIXTURE: [(&str, Option<u8>); 50] = [
    ("Educational score: 4", Some(4)),
    ("Educational score: 0", Some(0)),
    ("The page explains photosynthesis clearly.\nEducational score: 5", Some(5)),
    ("Points: 1 for relevance, 1 for coherence.\nEducational score: 2", Some(2)),
    ("I would give it 3 out of 5.", Some(3)),
    ("Rating 4/5", Some(4)),
    ("Rating: 2 / 5", Some(2)),
    ("score = 1", Some(1)),
    ("3", Some(3)),
    ("  5  ", Some(5)),
    ("教育得分：4", Some(4)),
    ("教育得分：４", Some(4)),
    ("满分5分，我给3分。", Some(3)),
    ("得分为2分", Some(2)),
    ("该文本适合课堂使用，评分：5", Some(5)),
    ("总分：1/5", Some(1)),
    ("评分 ０", Some(0)),
    ("Somewhere between 2-3, final answer: 2", Some(2)),
    ("Score: 4.", Some(4)),
    ("Score: **3**", Some(3)),
    ("Educational score: 3\n\nNote: the page has 12 ads.", Some(3)),
    ("1. Relevance 2. Depth\nEducational score: 4", Some(4)),
    ("It meets criteria 1 through 3. Educational score: 3", Some(3)),
    ("Final: (4)", Some(4)),
    ("Educational score: 5 (highly educational)", Some(5)),
    ("score:1", Some(1)),
    ("Score - 2", Some(2)),
    ("I'd say 4 \u{2014} solid intro material.", Some(4)),
    ("Educational score: [2]", Some(2)),
    ("第3部分很好。最终得分：4", Some(4)),
    ("great page!", None),
    ("", None),
    ("Educational score: 7", None),
    ("Educational score: 10", None),
    ("Educational score: -1", None),
    ("about 3.5", None),
    ("Score: 2.5/5", None),
    ("between 2-3", None),
    ("somewhere 3~4", None),
    ("from 2 to 3", None),
    ("3至4分之间", None),
    ("out of 5", None),
    ("满分5", None),
    ("/5", None),
    ("score: x4", None),
    ("version v2 of the rubric", None),
    ("H2O is water", None),
    ("Educational score: N/A", None),
    ("Year 2024 textbook", None),
    ("3–4 points", None),
];

#[test]
fn fixture_replies_parse_as_expected() {
    let mut wrong = Vec::new();
    for (reply, want) in FIXTURE {
        let got = match parse_score(reply) {
            Ok(s) => Some(s),
            Err(Error::UnparseableScore) => None,
            Err(e) => panic!("unexpected error for {reply:?}: {e}"),
        };
        if got != want {
            wrong.push(format!("{reply:?}: got {got:?}, want {want:?}"));
        }
    }
    assert!(wrong.is_empty(), "{} mismatches:\n{}", wrong.len(), wrong.join("\n"));
}

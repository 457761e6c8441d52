//! Question/answer pairs over scenes, with a symbolic oracle.
//!
//! Questions are only generated when the referent is unambiguous, so the
//! oracle answer is unique and exact-match scoring is fair.

use serde::{Deserialize, Serialize};

use super::{Cell, SceneSpec, Shape, OBJECT_COLORS, SHAPES};
use crate::rng::Pcg32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaKind {
    ColorOf,
    CountOf,
    PositionOf,
    ShapeAt,
}

pub const QA_KINDS: [QaKind; 4] = [
    QaKind::ColorOf,
    QaKind::CountOf,
    QaKind::PositionOf,
    QaKind::ShapeAt,
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
    pub kind: QaKind,
}

fn count_word(n: usize) -> &'static str {
    ["zero", "one", "two", "three"][n]
}

/// Shapes that appear exactly once (unambiguous "the {shape}" referent).
fn unique_shapes(spec: &SceneSpec) -> Vec<Shape> {
    SHAPES
        .iter()
        .copied()
        .filter(|&s| spec.count_matching(s, None) == 1)
        .collect()
}

/// (color, shape) classes that appear exactly once.
fn unique_colored(spec: &SceneSpec) -> Vec<(super::Color, Shape)> {
    let mut out = Vec::new();
    for &s in &SHAPES {
        for &c in &OBJECT_COLORS {
            if spec.count_matching(s, Some(c)) == 1 {
                out.push((c, s));
            }
        }
    }
    out
}

/// Sample one QA pair; the question kind is uniform over the kinds
/// applicable to this scene.
pub fn qa_pair(spec: &SceneSpec, rng: &mut Pcg32) -> QaPair {
    let mut kinds: Vec<QaKind> = Vec::new();
    if !unique_shapes(spec).is_empty() {
        kinds.push(QaKind::ColorOf);
        kinds.push(QaKind::PositionOf);
    }
    kinds.push(QaKind::CountOf);
    kinds.push(QaKind::ShapeAt);

    let kind = kinds[rng.next_below(kinds.len() as u32) as usize];
    match kind {
        QaKind::ColorOf => {
            let shapes = unique_shapes(spec);
            let s = shapes[rng.next_below(shapes.len() as u32) as usize];
            let obj = spec.objects.iter().find(|o| o.shape == s).unwrap();
            QaPair {
                question: format!("what color is the {}?", s.word()),
                answer: obj.color.word().to_string(),
                kind,
            }
        }
        QaKind::CountOf => {
            // Mostly ask about a present shape; sometimes the total.
            if rng.next_f32() < 0.3 {
                QaPair {
                    question: "how many shapes?".to_string(),
                    answer: count_word(spec.objects.len()).to_string(),
                    kind,
                }
            } else {
                let present: Vec<Shape> = SHAPES
                    .iter()
                    .copied()
                    .filter(|&s| spec.count_matching(s, None) > 0)
                    .collect();
                let s = present[rng.next_below(present.len() as u32) as usize];
                QaPair {
                    question: format!("how many {}?", s.plural()),
                    answer: count_word(spec.count_matching(s, None)).to_string(),
                    kind,
                }
            }
        }
        QaKind::PositionOf => {
            let classes = unique_colored(spec);
            // Prefer a colored referent when unique; else fall back to shape.
            if !classes.is_empty() && rng.next_f32() < 0.5 {
                let (c, s) = classes[rng.next_below(classes.len() as u32) as usize];
                let obj = spec
                    .objects
                    .iter()
                    .find(|o| o.shape == s && o.color == c)
                    .unwrap();
                QaPair {
                    question: format!("where is the {} {}?", c.word(), s.word()),
                    answer: obj.cell.position_name().to_string(),
                    kind,
                }
            } else {
                let shapes = unique_shapes(spec);
                let s = shapes[rng.next_below(shapes.len() as u32) as usize];
                let obj = spec.objects.iter().find(|o| o.shape == s).unwrap();
                QaPair {
                    question: format!("where is the {}?", s.word()),
                    answer: obj.cell.position_name().to_string(),
                    kind,
                }
            }
        }
        QaKind::ShapeAt => {
            let idx = rng.next_below(spec.objects.len() as u32) as usize;
            let obj = &spec.objects[idx];
            QaPair {
                question: format!("what shape is in the {}?", obj.cell.position_name()),
                answer: obj.shape.word().to_string(),
                kind,
            }
        }
    }
}

/// Re-derive the answer for a generated question. Returns None when the
/// question does not parse or has no unambiguous answer for this scene.
pub fn oracle_answer(spec: &SceneSpec, question: &str) -> Option<String> {
    let q = question.trim().trim_end_matches('?');
    let words: Vec<&str> = q.split_whitespace().collect();
    match words.as_slice() {
        ["what", "color", "is", "the", shape] => {
            let s = Shape::from_word(shape)?;
            if spec.count_matching(s, None) != 1 {
                return None;
            }
            let obj = spec.objects.iter().find(|o| o.shape == s)?;
            Some(obj.color.word().to_string())
        }
        ["how", "many", "shapes"] => Some(count_word(spec.objects.len()).to_string()),
        ["how", "many", plural] => {
            let s = Shape::from_plural(plural)?;
            Some(count_word(spec.count_matching(s, None)).to_string())
        }
        ["where", "is", "the", shape] => {
            let s = Shape::from_word(shape)?;
            if spec.count_matching(s, None) != 1 {
                return None;
            }
            let obj = spec.objects.iter().find(|o| o.shape == s)?;
            Some(obj.cell.position_name().to_string())
        }
        ["where", "is", "the", color, shape] => {
            let c = super::Color::from_word(color)?;
            let s = Shape::from_word(shape)?;
            if spec.count_matching(s, Some(c)) != 1 {
                return None;
            }
            let obj = spec
                .objects
                .iter()
                .find(|o| o.shape == s && o.color == c)?;
            Some(obj.cell.position_name().to_string())
        }
        ["what", "shape", "is", "in", "the", rest @ ..] => {
            let name = rest.join(" ");
            let cell = Cell::from_position_name(&name)?;
            let obj = spec.objects.iter().find(|o| o.cell == cell)?;
            Some(obj.shape.word().to_string())
        }
        _ => None,
    }
}

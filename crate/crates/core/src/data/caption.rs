//! Caption template grammar and its inverse.
//!
//! Forms:
//!   "a red circle"                      single, color optional
//!   "a red circle in the top left"      single with position
//!   "two blue squares"                  exact count, color optional
//!   "a circle and a blue square"        both present
//!   "a circle left of a square"         relative placement
//!
//! `parse_caption` maps any grammar output back to a constraint that the
//! originating scene satisfies; relational captions constrain relative
//! cells only.

use serde::{Deserialize, Serialize};

use super::{Cell, Color, SceneObject, SceneSpec, Shape};
use crate::error::{Error, Result};
use crate::rng::Pcg32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemSpec {
    pub shape: Shape,
    pub color: Option<Color>,
}

impl ItemSpec {
    pub fn matches(&self, o: &SceneObject) -> bool {
        o.shape == self.shape && self.color.map_or(true, |c| o.color == c)
    }

    fn words(&self) -> String {
        match self.color {
            Some(c) => format!("{} {}", c.word(), self.shape.word()),
            None => self.shape.word().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

pub const RELATIONS: [Relation; 4] = [
    Relation::LeftOf,
    Relation::RightOf,
    Relation::Above,
    Relation::Below,
];

impl Relation {
    pub fn words(self) -> &'static str {
        match self {
            Relation::LeftOf => "left of",
            Relation::RightOf => "right of",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }

    pub fn holds(self, a: Cell, b: Cell) -> bool {
        match self {
            Relation::LeftOf => a.col < b.col,
            Relation::RightOf => a.col > b.col,
            Relation::Above => a.row < b.row,
            Relation::Below => a.row > b.row,
        }
    }
}

fn count_word(n: usize) -> &'static str {
    match n {
        1 => "one",
        2 => "two",
        3 => "three",
        _ => unreachable!("scene object count is 1..=3"),
    }
}

fn count_from_word(w: &str) -> Option<usize> {
    match w {
        "one" => Some(1),
        "two" => Some(2),
        "three" => Some(3),
        _ => None,
    }
}

/// What a caption asserts about a scene.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CaptionConstraint {
    Single {
        item: ItemSpec,
        position: Option<Cell>,
    },
    Count {
        count: usize,
        item: ItemSpec,
    },
    Two {
        a: ItemSpec,
        b: ItemSpec,
    },
    Relation {
        a: ItemSpec,
        rel: Relation,
        b: ItemSpec,
    },
}

impl CaptionConstraint {
    pub fn text(&self) -> String {
        match self {
            CaptionConstraint::Single { item, position } => match position {
                Some(cell) => format!("a {} in the {}", item.words(), cell.position_name()),
                None => format!("a {}", item.words()),
            },
            CaptionConstraint::Count { count, item } => {
                let noun = match item.color {
                    Some(c) => format!("{} {}", c.word(), item.shape.plural()),
                    None => item.shape.plural().to_string(),
                };
                format!("{} {}", count_word(*count), noun)
            }
            CaptionConstraint::Two { a, b } => format!("a {} and a {}", a.words(), b.words()),
            CaptionConstraint::Relation { a, rel, b } => {
                format!("a {} {} a {}", a.words(), rel.words(), b.words())
            }
        }
    }

    /// Does a set of objects satisfy this constraint?
    pub fn satisfied_by_objects(&self, objects: &[SceneObject]) -> bool {
        match self {
            CaptionConstraint::Single { item, position } => objects.iter().any(|o| {
                item.matches(o) && position.map_or(true, |cell| o.cell == cell)
            }),
            CaptionConstraint::Count { count, item } => {
                objects.iter().filter(|o| item.matches(o)).count() == *count
            }
            CaptionConstraint::Two { a, b } => objects.iter().enumerate().any(|(i, oa)| {
                a.matches(oa)
                    && objects
                        .iter()
                        .enumerate()
                        .any(|(j, ob)| j != i && b.matches(ob))
            }),
            CaptionConstraint::Relation { a, rel, b } => {
                objects.iter().enumerate().any(|(i, oa)| {
                    a.matches(oa)
                        && objects.iter().enumerate().any(|(j, ob)| {
                            j != i && b.matches(ob) && rel.holds(oa.cell, ob.cell)
                        })
                })
            }
        }
    }

    pub fn satisfied_by(&self, scene: &SceneSpec) -> bool {
        self.satisfied_by_objects(&scene.objects)
    }
}

/// Sample a caption for a scene. Single-object scenes get single-form
/// captions (half with position); multi-object scenes draw among count,
/// two-object, and relational forms, constrained to stay truthful.
pub fn caption(spec: &SceneSpec, rng: &mut Pcg32) -> String {
    constraint_for(spec, rng).text()
}

/// As [`caption`], but returning the structured constraint.
pub fn constraint_for(spec: &SceneSpec, rng: &mut Pcg32) -> CaptionConstraint {
    let objs = &spec.objects;
    if objs.len() == 1 {
        let o = objs[0];
        let with_color = rng.next_f32() < 0.8;
        let item = ItemSpec {
            shape: o.shape,
            color: with_color.then_some(o.color),
        };
        let position = (rng.next_f32() < 0.5).then_some(o.cell);
        return CaptionConstraint::Single { item, position };
    }

    // Applicable multi-object forms.
    let mut options: Vec<CaptionConstraint> = Vec::new();

    // Count form: a (shape, color?) class whose scene count is >= 2.
    for colored in [false, true] {
        for &shape in &super::SHAPES {
            if colored {
                for &color in &super::OBJECT_COLORS {
                    let c = spec.count_matching(shape, Some(color));
                    if c >= 2 {
                        options.push(CaptionConstraint::Count {
                            count: c,
                            item: ItemSpec {
                                shape,
                                color: Some(color),
                            },
                        });
                    }
                }
            } else {
                let c = spec.count_matching(shape, None);
                if c >= 2 {
                    options.push(CaptionConstraint::Count {
                        count: c,
                        item: ItemSpec { shape, color: None },
                    });
                }
            }
        }
    }

    // Two-object and relational forms over object pairs.
    for (i, oa) in objs.iter().enumerate() {
        for (j, ob) in objs.iter().enumerate() {
            if i == j {
                continue;
            }
            let a = ItemSpec {
                shape: oa.shape,
                color: Some(oa.color),
            };
            let b = ItemSpec {
                shape: ob.shape,
                color: Some(ob.color),
            };
            if i < j {
                options.push(CaptionConstraint::Two { a, b });
            }
            for rel in RELATIONS {
                if rel.holds(oa.cell, ob.cell) {
                    options.push(CaptionConstraint::Relation { a, rel, b });
                }
            }
        }
    }

    let pick = rng.next_below(options.len() as u32) as usize;
    let chosen = options[pick].clone();
    debug_assert!(chosen.satisfied_by(spec));
    chosen
}

/// Invert a caption back to its constraint.
pub fn parse_caption(text: &str) -> Result<CaptionConstraint> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let mut p = Parser { words, pos: 0 };
    let c = p.parse()?;
    if p.pos != p.words.len() {
        return Err(Error::Parse(format!(
            "trailing words after caption: {:?}",
            &p.words[p.pos..]
        )));
    }
    Ok(c)
}

struct Parser<'a> {
    words: Vec<&'a str>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a str> {
        self.words.get(self.pos).copied()
    }

    fn next(&mut self) -> Result<&'a str> {
        let w = self
            .peek()
            .ok_or_else(|| Error::Parse("unexpected end of caption".into()))?;
        self.pos += 1;
        Ok(w)
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        let w = self.next()?;
        if w != word {
            return Err(Error::Parse(format!("expected {word:?}, found {w:?}")));
        }
        Ok(())
    }

    fn parse(&mut self) -> Result<CaptionConstraint> {
        match self.peek() {
            Some("a") => self.parse_from_article(),
            Some(w) if count_from_word(w).is_some() => self.parse_count(),
            Some(w) => Err(Error::Parse(format!("caption cannot start with {w:?}"))),
            None => Err(Error::Parse("empty caption".into())),
        }
    }

    fn parse_item(&mut self) -> Result<ItemSpec> {
        self.expect("a")?;
        let w = self.next()?;
        if let Some(shape) = Shape::from_word(w) {
            return Ok(ItemSpec { shape, color: None });
        }
        let color = Color::from_word(w)
            .ok_or_else(|| Error::Parse(format!("unknown color or shape {w:?}")))?;
        let w = self.next()?;
        let shape =
            Shape::from_word(w).ok_or_else(|| Error::Parse(format!("unknown shape {w:?}")))?;
        Ok(ItemSpec {
            shape,
            color: Some(color),
        })
    }

    fn parse_from_article(&mut self) -> Result<CaptionConstraint> {
        let item = self.parse_item()?;
        match self.peek() {
            None => Ok(CaptionConstraint::Single {
                item,
                position: None,
            }),
            Some("in") => {
                self.expect("in")?;
                self.expect("the")?;
                // Position phrases terminate a caption; consume the rest.
                let name = self.words[self.pos..].join(" ");
                self.pos = self.words.len();
                let cell = Cell::from_position_name(&name)
                    .ok_or_else(|| Error::Parse(format!("unknown position {name:?}")))?;
                Ok(CaptionConstraint::Single {
                    item,
                    position: Some(cell),
                })
            }
            Some("and") => {
                self.expect("and")?;
                let b = self.parse_item()?;
                Ok(CaptionConstraint::Two { a: item, b })
            }
            Some("left") | Some("right") => {
                let side = self.next()?;
                self.expect("of")?;
                let rel = if side == "left" {
                    Relation::LeftOf
                } else {
                    Relation::RightOf
                };
                let b = self.parse_item()?;
                Ok(CaptionConstraint::Relation { a: item, rel, b })
            }
            Some("above") | Some("below") => {
                let w = self.next()?;
                let rel = if w == "above" {
                    Relation::Above
                } else {
                    Relation::Below
                };
                let b = self.parse_item()?;
                Ok(CaptionConstraint::Relation { a: item, rel, b })
            }
            Some(w) => Err(Error::Parse(format!("unexpected word {w:?}"))),
        }
    }

    fn parse_count(&mut self) -> Result<CaptionConstraint> {
        let w = self.next()?;
        let count = count_from_word(w).expect("checked by caller");
        let w = self.next()?;
        if let Some(shape) = Shape::from_plural(w) {
            return Ok(CaptionConstraint::Count {
                count,
                item: ItemSpec { shape, color: None },
            });
        }
        let color = Color::from_word(w)
            .ok_or_else(|| Error::Parse(format!("unknown color or shape {w:?}")))?;
        let w = self.next()?;
        let shape = Shape::from_plural(w)
            .ok_or_else(|| Error::Parse(format!("unknown plural shape {w:?}")))?;
        Ok(CaptionConstraint::Count {
            count,
            item: ItemSpec {
                shape,
                color: Some(color),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample_scene;

    #[test]
    fn roundtrip_sampled_captions() {
        let mut rng = Pcg32::new(404, 0);
        for _ in 0..10_000 {
            let s = sample_scene(&mut rng);
            let text = caption(&s, &mut rng);
            let parsed = parse_caption(&text)
                .unwrap_or_else(|e| panic!("cannot parse {text:?}: {e}"));
            assert!(
                parsed.satisfied_by(&s),
                "caption {text:?} not satisfied by its scene {s:?}"
            );
        }
    }

    #[test]
    fn single_object_caption_is_unambiguous() {
        let text = "a red circle in the top left";
        let c = parse_caption(text).unwrap();
        match c {
            CaptionConstraint::Single { item, position } => {
                assert_eq!(item.shape, Shape::Circle);
                assert_eq!(item.color, Some(Color::Red));
                assert_eq!(position, Some(Cell::new(0, 0)));
            }
            other => panic!("wrong parse {other:?}"),
        }
    }

    #[test]
    fn malformed_captions_error() {
        for bad in [
            "",
            "banana",
            "a",
            "a banana",
            "two circle",
            "a red circle in the nowhere",
            "a circle and",
            "a circle left a square",
            "a red circle extra words",
        ] {
            assert!(parse_caption(bad).is_err(), "parsed {bad:?}");
        }
    }

    #[test]
    fn relation_semantics() {
        assert!(Relation::LeftOf.holds(Cell::new(1, 0), Cell::new(1, 2)));
        assert!(!Relation::LeftOf.holds(Cell::new(1, 2), Cell::new(1, 0)));
        assert!(Relation::Above.holds(Cell::new(0, 2), Cell::new(2, 0)));
        assert!(Relation::Below.holds(Cell::new(2, 0), Cell::new(0, 0)));
    }

    #[test]
    fn center_position_parses() {
        let c = parse_caption("a blue square in the center").unwrap();
        match c {
            CaptionConstraint::Single { position, .. } => {
                assert_eq!(position, Some(Cell::new(1, 1)));
            }
            other => panic!("wrong parse {other:?}"),
        }
    }
}

//! Synthetic shapes corpus: exact scene descriptions, deterministic
//! rendering, caption grammar with a parser, QA pairs with a symbolic
//! oracle, and char-level text tokens.
//!
//! Scenes place 1-3 colored shapes on a 3x3 grid. The palette is the 8
//! corners of RGB space; white is the background, so objects draw from
//! the remaining 7 colors and every rendered pixel is exactly one
//! palette color. That exactness is what makes the evaluation detector
//! an oracle instead of a model.

mod caption;
mod corpus;
mod qa;
mod render;
mod text;

pub use caption::{
    caption, constraint_for, parse_caption, CaptionConstraint, ItemSpec, Relation, RELATIONS,
};
pub use corpus::{generate_corpus, load_records, CorpusPaths, SceneRecord, QA_PER_SCENE};
pub use qa::{oracle_answer, qa_pair, QaKind, QaPair, QA_KINDS};
pub use render::{
    cell_geometry, ppm_read, ppm_write, render, resize_nearest, Image, SUPPORTED_RESOLUTIONS,
};
pub use text::{alphabet_size, text_detokenize, text_tokenize, ALPHABET};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Pcg32;

pub const GRID: u8 = 3;
pub const MAX_OBJECTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

pub const SHAPES: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

impl Shape {
    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }

    pub fn plural(self) -> &'static str {
        match self {
            Shape::Circle => "circles",
            Shape::Square => "squares",
            Shape::Triangle => "triangles",
        }
    }

    pub fn from_word(w: &str) -> Option<Shape> {
        SHAPES.iter().copied().find(|s| s.word() == w)
    }

    pub fn from_plural(w: &str) -> Option<Shape> {
        SHAPES.iter().copied().find(|s| s.plural() == w)
    }
}

/// The 8 corners of RGB space. White is reserved for the background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Black,
    Red,
    Green,
    Blue,
    Yellow,
    Magenta,
    Cyan,
    White,
}

pub const PALETTE: [Color; 8] = [
    Color::Black,
    Color::Red,
    Color::Green,
    Color::Blue,
    Color::Yellow,
    Color::Magenta,
    Color::Cyan,
    Color::White,
];

/// Colors usable by objects (white-on-white would be undetectable).
pub const OBJECT_COLORS: [Color; 7] = [
    Color::Black,
    Color::Red,
    Color::Green,
    Color::Blue,
    Color::Yellow,
    Color::Magenta,
    Color::Cyan,
];

impl Color {
    pub fn rgb(self) -> [f32; 3] {
        match self {
            Color::Black => [0.0, 0.0, 0.0],
            Color::Red => [1.0, 0.0, 0.0],
            Color::Green => [0.0, 1.0, 0.0],
            Color::Blue => [0.0, 0.0, 1.0],
            Color::Yellow => [1.0, 1.0, 0.0],
            Color::Magenta => [1.0, 0.0, 1.0],
            Color::Cyan => [0.0, 1.0, 1.0],
            Color::White => [1.0, 1.0, 1.0],
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            Color::Black => "black",
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Magenta => "magenta",
            Color::Cyan => "cyan",
            Color::White => "white",
        }
    }

    pub fn from_word(w: &str) -> Option<Color> {
        PALETTE.iter().copied().find(|c| c.word() == w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: u8,
    pub col: u8,
}

impl Cell {
    pub fn new(row: u8, col: u8) -> Self {
        assert!(row < GRID && col < GRID);
        Cell { row, col }
    }

    pub fn index(self) -> usize {
        self.row as usize * GRID as usize + self.col as usize
    }

    pub fn from_index(i: usize) -> Self {
        assert!(i < (GRID * GRID) as usize);
        Cell {
            row: (i / GRID as usize) as u8,
            col: (i % GRID as usize) as u8,
        }
    }

    pub fn position_name(self) -> &'static str {
        const NAMES: [&str; 9] = [
            "top left",
            "top center",
            "top right",
            "middle left",
            "center",
            "middle right",
            "bottom left",
            "bottom center",
            "bottom right",
        ];
        NAMES[self.index()]
    }

    pub fn from_position_name(name: &str) -> Option<Cell> {
        (0..9)
            .map(Cell::from_index)
            .find(|c| c.position_name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    pub cell: Cell,
}

/// Exact symbolic description of one image; ground truth for rendering,
/// captions, QA, and evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<SceneObject>,
}

impl SceneSpec {
    pub fn new(mut objects: Vec<SceneObject>) -> Result<Self> {
        if objects.is_empty() || objects.len() > MAX_OBJECTS {
            return Err(Error::contract(format!(
                "scene must hold 1..=3 objects, got {}",
                objects.len()
            )));
        }
        objects.sort_by_key(|o| o.cell);
        let mut cells: Vec<Cell> = objects.iter().map(|o| o.cell).collect();
        cells.dedup();
        if cells.len() != objects.len() {
            return Err(Error::contract("scene objects share a cell"));
        }
        Ok(SceneSpec { objects })
    }

    pub fn count_matching(&self, shape: Shape, color: Option<Color>) -> usize {
        self.objects
            .iter()
            .filter(|o| o.shape == shape && color.map_or(true, |c| o.color == c))
            .count()
    }

    /// Stable 64-bit fingerprint of the canonical (cell-sorted) encoding.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for o in &self.objects {
            for b in [o.shape as u8, o.color as u8, o.cell.row, o.cell.col] {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    /// Scenes with `fingerprint % 8 == 0` are reserved for evaluation, so
    /// the held-out set is disjoint from training scenes by construction.
    pub fn is_eval_holdout(&self) -> bool {
        self.fingerprint() % 8 == 0
    }
}

/// Which side of the scene-space partition to sample from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
    Any,
}

/// Object count ~ {1: 0.4, 2: 0.4, 3: 0.2}; attributes uniform; cells
/// sampled without replacement.
pub fn sample_scene(rng: &mut Pcg32) -> SceneSpec {
    let u = rng.next_f32();
    let count = if u < 0.4 {
        1
    } else if u < 0.8 {
        2
    } else {
        3
    };
    let cells = rng.sample_distinct(9, count);
    let objects = cells
        .into_iter()
        .map(|i| SceneObject {
            shape: SHAPES[rng.next_below(3) as usize],
            color: OBJECT_COLORS[rng.next_below(7) as usize],
            cell: Cell::from_index(i),
        })
        .collect();
    SceneSpec::new(objects).expect("sampled cells are distinct")
}

/// Rejection-sample a scene from one side of the train/eval partition.
pub fn sample_scene_split(rng: &mut Pcg32, split: Split) -> SceneSpec {
    loop {
        let s = sample_scene(rng);
        match split {
            Split::Any => return s,
            Split::Train if !s.is_eval_holdout() => return s,
            Split::Eval if s.is_eval_holdout() => return s,
            _ => continue,
        }
    }
}

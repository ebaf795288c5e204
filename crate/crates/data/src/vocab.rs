use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Magenta,
    Cyan,
    Orange,
    Purple,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Diamond,
    Bar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Size {
    Small,
    Big,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    Left,
    Right,
    Up,
    Down,
    Still,
}

impl Color {
    pub const ALL: [Color; 8] = [Color::Red, Color::Green, Color::Blue, Color::Yellow, Color::Magenta, Color::Cyan, Color::Orange, Color::Purple];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Magenta => "magenta",
            Color::Cyan => "cyan",
            Color::Orange => "orange",
            Color::Purple => "purple",
        }
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [220, 30, 30],
            Color::Green => [40, 200, 60],
            Color::Blue => [40, 70, 230],
            Color::Yellow => [235, 225, 40],
            Color::Magenta => [225, 40, 215],
            Color::Cyan => [40, 220, 225],
            Color::Orange => [245, 140, 20],
            Color::Purple => [130, 50, 190],
        }
    }
}

impl Shape {
    pub const ALL: [Shape; 5] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Diamond, Shape::Bar];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Diamond => "diamond",
            Shape::Bar => "bar",
        }
    }
}

impl Size {
    pub const ALL: [Size; 2] = [Size::Small, Size::Big];

    pub fn word(self) -> &'static str {
        match self {
            Size::Small => "small",
            Size::Big => "big",
        }
    }
}

impl Motion {
    pub const ALL: [Motion; 5] = [Motion::Left, Motion::Right, Motion::Up, Motion::Down, Motion::Still];

    /// Unit direction in (x, y), image coordinates.
    pub fn direction(self) -> (f64, f64) {
        match self {
            Motion::Left => (-1.0, 0.0),
            Motion::Right => (1.0, 0.0),
            Motion::Up => (0.0, -1.0),
            Motion::Down => (0.0, 1.0),
            Motion::Still => (0.0, 0.0),
        }
    }

    /// Words appended to a query mentioning the motion.
    pub fn words(self) -> &'static [&'static str] {
        match self {
            Motion::Left => &["moving", "left"],
            Motion::Right => &["moving", "right"],
            Motion::Up => &["moving", "up"],
            Motion::Down => &["moving", "down"],
            Motion::Still => &["still"],
        }
    }
}

/// Closed token vocabulary. Index 0 is padding and never emitted in a query.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub tokens: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let mut tokens: Vec<String> = ["<pad>", "the", "that", "is"].iter().map(|s| s.to_string()).collect();
        tokens.extend(Size::ALL.iter().map(|s| s.word().to_string()));
        tokens.extend(Color::ALL.iter().map(|c| c.word().to_string()));
        tokens.extend(Shape::ALL.iter().map(|s| s.word().to_string()));
        tokens.extend(["moving", "left", "right", "up", "down", "still"].iter().map(|s| s.to_string()));
        Vocabulary { tokens }
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> Result<usize> {
        self.tokens.iter().position(|t| t == word).ok_or_else(|| DataError::Vocab(word.to_string()))
    }

    pub fn encode(&self, words: &[&str]) -> Result<Vec<usize>> {
        words.iter().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter().map(|&i| self.tokens.get(i).cloned().ok_or_else(|| DataError::Vocab(format!("#{i}")))).collect()
    }
}

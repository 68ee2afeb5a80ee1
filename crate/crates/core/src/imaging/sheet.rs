//! Contact sheets: a labeled grid of equally sized cells.
//!
//! Cells sit row-major behind a 16-px label band on the top edge (column
//! labels) and the left edge (row labels, drawn top to bottom), separated by
//! 4-px white gutters.

use super::font::{self, ADVANCE, GLYPH_HEIGHT};
use super::RgbImage;
use crate::error::{Error, Result};

pub const GUTTER: usize = 4;
pub const BAND: usize = 16;

const WHITE: [u8; 3] = [255; 3];
const INK: [u8; 3] = [0; 3];
const FAILED_FILL: [u8; 3] = [128; 3];
const FAILED_MARK: [u8; 3] = [200, 0, 0];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SheetLayout {
    pub rows: usize,
    pub cols: usize,
    pub cell_width: usize,
    pub cell_height: usize,
}

impl SheetLayout {
    pub fn cell_origin(&self, row: usize, col: usize) -> (usize, usize) {
        (
            BAND + col * (self.cell_width + GUTTER),
            BAND + row * (self.cell_height + GUTTER),
        )
    }
}

/// `(width, height)` of a sheet: cells, gutters between them, and one label
/// band per labeled edge.
pub fn sheet_dimensions(layout: &SheetLayout) -> (usize, usize) {
    let span = |n: usize, cell: usize| n * cell + n.saturating_sub(1) * GUTTER + BAND;
    (
        span(layout.cols, layout.cell_width),
        span(layout.rows, layout.cell_height),
    )
}

/// Placeholder for a cell whose run failed: mid-gray with a diagonal cross.
pub fn failed_cell(width: usize, height: usize) -> RgbImage {
    let mut img = RgbImage::filled(width, height, FAILED_FILL);
    let steps = width.max(height);
    for i in 0..steps {
        let x = i * width / steps;
        let y = i * height / steps;
        img.set_pixel(x, y, FAILED_MARK);
        img.set_pixel(width - 1 - x, y, FAILED_MARK);
    }
    img
}

fn draw_char(canvas: &mut RgbImage, c: char, x0: usize, y0: usize) {
    for gy in 0..GLYPH_HEIGHT {
        for gx in 0..font::GLYPH_WIDTH {
            let (x, y) = (x0 + gx, y0 + gy);
            if font::is_set(c, gx, gy) && x < canvas.width() && y < canvas.height() {
                canvas.set_pixel(x, y, INK);
            }
        }
    }
}

/// Horizontal text centered in `[x, x + span)`, truncated to fit.
fn draw_label_horizontal(canvas: &mut RgbImage, text: &str, x: usize, span: usize) {
    let max_chars = span / ADVANCE;
    let chars: Vec<char> = text.chars().take(max_chars).collect();
    let width = (chars.len() * ADVANCE).saturating_sub(1);
    let start = x + (span - width.min(span)) / 2;
    let y = (BAND - GLYPH_HEIGHT) / 2;
    for (i, c) in chars.into_iter().enumerate() {
        draw_char(canvas, c, start + i * ADVANCE, y);
    }
}

/// Characters stacked top to bottom in the left band, centered in
/// `[y, y + span)`.
fn draw_label_vertical(canvas: &mut RgbImage, text: &str, y: usize, span: usize) {
    let pitch = GLYPH_HEIGHT + 1;
    let chars: Vec<char> = text.chars().take(span / pitch).collect();
    let height = (chars.len() * pitch).saturating_sub(1);
    let start = y + (span - height.min(span)) / 2;
    let x = (BAND - font::GLYPH_WIDTH) / 2;
    for (i, c) in chars.into_iter().enumerate() {
        draw_char(canvas, c, x, start + i * pitch);
    }
}

/// Lays out `cells[row][col]` on a white canvas with row and column labels.
pub fn contact_sheet(
    cells: &[Vec<RgbImage>],
    row_labels: &[String],
    col_labels: &[String],
) -> Result<RgbImage> {
    let rows = cells.len();
    let cols = cells.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(Error::Image("contact sheet needs at least one cell".into()));
    }
    if cells.iter().any(|r| r.len() != cols) {
        return Err(Error::Image("ragged contact sheet grid".into()));
    }
    let (cw, ch) = (cells[0][0].width(), cells[0][0].height());
    if cells
        .iter()
        .flatten()
        .any(|c| c.width() != cw || c.height() != ch)
    {
        return Err(Error::Image("contact sheet cells differ in size".into()));
    }
    let layout = SheetLayout {
        rows,
        cols,
        cell_width: cw,
        cell_height: ch,
    };
    let (width, height) = sheet_dimensions(&layout);
    let mut canvas = RgbImage::filled(width, height, WHITE);
    for (r, row) in cells.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let (x, y) = layout.cell_origin(r, c);
            canvas.blit(cell, x, y);
        }
    }
    for (c, label) in col_labels.iter().take(cols).enumerate() {
        let (x, _) = layout.cell_origin(0, c);
        draw_label_horizontal(&mut canvas, label, x, cw);
    }
    for (r, label) in row_labels.iter().take(rows).enumerate() {
        let (_, y) = layout.cell_origin(r, 0);
        draw_label_vertical(&mut canvas, label, y, ch);
    }
    Ok(canvas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{}", i * 100)).collect()
    }

    #[test]
    fn one_by_two_sheet() {
        let cells = vec![vec![RgbImage::filled(64, 64, [10; 3]); 2]];
        let sheet = contact_sheet(&cells, &labels(1), &labels(2)).unwrap();
        assert_eq!((sheet.width(), sheet.height()), (148, 80));
        assert_eq!(sheet.pixel(16, 16), [10; 3]);
        // Gutter between the two cells stays white.
        assert_eq!(sheet.pixel(16 + 64 + 1, 40), [255; 3]);
        assert_eq!(sheet.pixel(16 + 68, 40), [10; 3]);
    }

    #[test]
    fn single_cell_plus_bands() {
        let cells = vec![vec![RgbImage::filled(20, 10, [1; 3])]];
        let sheet = contact_sheet(&cells, &[], &[]).unwrap();
        assert_eq!((sheet.width(), sheet.height()), (36, 26));
    }

    #[test]
    fn labels_leave_ink_in_bands() {
        let cells = vec![vec![RgbImage::filled(64, 64, [255; 3]); 2]; 2];
        let sheet = contact_sheet(
            &cells,
            &["A".into(), "B".into()],
            &["1E-6".into(), "100".into()],
        )
        .unwrap();
        let ink_in = |x0: usize, x1: usize, y0: usize, y1: usize| {
            (y0..y1).any(|y| (x0..x1).any(|x| sheet.pixel(x, y) == [0; 3]))
        };
        assert!(ink_in(16, 80, 0, 16));
        assert!(ink_in(0, 16, 16, 80));
        assert!(ink_in(0, 16, 84, 148));
    }

    #[test]
    fn ragged_or_mismatched_grids_fail() {
        let a = RgbImage::filled(8, 8, [0; 3]);
        let ragged = vec![vec![a.clone(), a.clone()], vec![a.clone()]];
        assert!(contact_sheet(&ragged, &[], &[]).is_err());
        let mixed = vec![vec![a.clone(), RgbImage::filled(9, 8, [0; 3])]];
        assert!(contact_sheet(&mixed, &[], &[]).is_err());
        assert!(contact_sheet(&[], &[], &[]).is_err());
    }

    #[test]
    fn failed_cell_is_marked() {
        let f = failed_cell(16, 16);
        assert_eq!(f.pixel(0, 0), FAILED_MARK);
        assert_eq!(f.pixel(15, 0), FAILED_MARK);
        assert_eq!(f.pixel(8, 2), FAILED_FILL);
    }

    proptest! {
        #[test]
        fn dimensions_match_layout_formula(rows in 1usize..5, cols in 1usize..6, cw in 1usize..24, ch in 1usize..24) {
            let cells = vec![vec![RgbImage::filled(cw, ch, [7; 3]); cols]; rows];
            let sheet = contact_sheet(&cells, &labels(rows), &labels(cols)).unwrap();
            prop_assert_eq!(sheet.width(), cols * cw + (cols - 1) * GUTTER + BAND);
            prop_assert_eq!(sheet.height(), rows * ch + (rows - 1) * GUTTER + BAND);
        }
    }
}

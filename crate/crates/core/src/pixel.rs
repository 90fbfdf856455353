//! Image header parsing and invisible-pixel prevalence.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::RequestGraph;
use crate::model::{CrawlDataset, HttpTransaction};
use crate::psl::PublicSuffixTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PixelThresholds {
    /// Images with both dimensions at or below this are invisible pixels.
    pub invisible_max_dim: u32,
    /// Images with both dimensions strictly above this are big images.
    pub big_min_exclusive: u32,
}

impl Default for PixelThresholds {
    fn default() -> Self {
        Self {
            invisible_max_dim: 1,
            big_min_exclusive: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ImageFormat {
    Gif,
    Png,
    Jpeg,
    WebpUnsupported,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ImageKind {
    Invisible1x1,
    ZeroContent,
    SmallImage,
    BigImage,
    UnknownFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageClass {
    pub kind: ImageKind,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub format: ImageFormat,
}

impl ImageClass {
    pub fn is_invisible(&self) -> bool {
        matches!(self.kind, ImageKind::Invisible1x1 | ImageKind::ZeroContent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("unrecognized image format")]
    UnknownFormat(ImageFormat),
    #[error("{0:?} header is truncated")]
    TruncatedHeader(ImageFormat),
    #[error("response is not an image")]
    NotAnImage,
}

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

pub fn sniff_format(body: &[u8]) -> ImageFormat {
    if body.starts_with(b"GIF87a") || body.starts_with(b"GIF89a") {
        ImageFormat::Gif
    } else if body.starts_with(PNG_SIGNATURE) {
        ImageFormat::Png
    } else if body.starts_with(&[0xFF, 0xD8]) {
        ImageFormat::Jpeg
    } else if body.len() >= 12 && &body[..4] == b"RIFF" && &body[8..12] == b"WEBP" {
        ImageFormat::WebpUnsupported
    } else {
        ImageFormat::Other
    }
}

/// Reads `(width, height)` from the fixed header of a GIF, PNG or JPEG.
/// Nothing beyond the header is decoded.
pub fn image_dimensions(body: &[u8]) -> Result<(ImageFormat, u32, u32), ImageError> {
    let format = sniff_format(body);
    let (w, h) = match format {
        ImageFormat::Gif => {
            let hdr = body.get(6..10).ok_or(ImageError::TruncatedHeader(format))?;
            (
                u16::from_le_bytes([hdr[0], hdr[1]]) as u32,
                u16::from_le_bytes([hdr[2], hdr[3]]) as u32,
            )
        }
        ImageFormat::Png => {
            let hdr = body.get(12..24).ok_or(ImageError::TruncatedHeader(format))?;
            if &hdr[..4] != b"IHDR" {
                return Err(ImageError::TruncatedHeader(format));
            }
            (
                u32::from_be_bytes([hdr[4], hdr[5], hdr[6], hdr[7]]),
                u32::from_be_bytes([hdr[8], hdr[9], hdr[10], hdr[11]]),
            )
        }
        ImageFormat::Jpeg => jpeg_dimensions(body)?,
        other => return Err(ImageError::UnknownFormat(other)),
    };
    Ok((format, w, h))
}

fn jpeg_dimensions(body: &[u8]) -> Result<(u32, u32), ImageError> {
    let truncated = ImageError::TruncatedHeader(ImageFormat::Jpeg);
    let mut pos = 2;
    loop {
        // Skip fill bytes before the marker code.
        while body.get(pos) == Some(&0xFF) && body.get(pos + 1) == Some(&0xFF) {
            pos += 1;
        }
        let marker = *body.get(pos..pos + 2).ok_or(truncated)?.get(1).ok_or(truncated)?;
        if body[pos] != 0xFF {
            return Err(truncated);
        }
        pos += 2;
        match marker {
            // Standalone markers carry no length.
            0x01 | 0xD0..=0xD8 => continue,
            0xD9 | 0xDA => return Err(truncated),
            _ => {}
        }
        let len_bytes = body.get(pos..pos + 2).ok_or(truncated)?;
        let len = u16::from_be_bytes([len_bytes[0], len_bytes[1]]) as usize;
        if len < 2 {
            return Err(truncated);
        }
        if marker == 0xC0 || marker == 0xC2 {
            let sof = body.get(pos + 2..pos + 7).ok_or(truncated)?;
            let h = u16::from_be_bytes([sof[1], sof[2]]) as u32;
            let w = u16::from_be_bytes([sof[3], sof[4]]) as u32;
            return Ok((w, h));
        }
        pos += len;
    }
}

/// Buckets an image response. Requires an `image/*` content type or a
/// stored body.
pub fn classify_image(t: &HttpTransaction, th: &PixelThresholds) -> Result<ImageClass, ImageError> {
    if !t.is_image() && t.body.is_none() {
        return Err(ImageError::NotAnImage);
    }
    let unknown = |format| ImageClass {
        kind: ImageKind::UnknownFormat,
        width: None,
        height: None,
        format,
    };
    let body = match &t.body {
        Some(b) => b.as_slice(),
        None if t.content_length() == Some(0) => &[],
        None => return Ok(unknown(ImageFormat::Other)),
    };
    if body.is_empty() {
        return Ok(ImageClass {
            kind: ImageKind::ZeroContent,
            width: None,
            height: None,
            format: ImageFormat::Other,
        });
    }
    match image_dimensions(body) {
        Ok((format, w, h)) => {
            let kind = if w <= th.invisible_max_dim && h <= th.invisible_max_dim {
                ImageKind::Invisible1x1
            } else if w > th.big_min_exclusive && h > th.big_min_exclusive {
                ImageKind::BigImage
            } else {
                ImageKind::SmallImage
            };
            Ok(ImageClass {
                kind,
                width: Some(w),
                height: Some(h),
                format,
            })
        }
        Err(ImageError::UnknownFormat(f)) | Err(ImageError::TruncatedHeader(f)) => Ok(unknown(f)),
        Err(ImageError::NotAnImage) => unreachable!("image_dimensions never reports NotAnImage"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainCount {
    pub domain: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelPrevalenceReport {
    pub total_images: usize,
    pub invisible_images: usize,
    pub zero_content_images: usize,
    pub one_by_one_images: usize,
    pub big_images: usize,
    pub unknown_format_images: usize,
    pub invisible_share: f64,
    pub zero_content_share: f64,
    pub one_by_one_share: f64,
    pub domains_with_pixel_share: f64,
    pub pages_with_pixel_share: f64,
    pub top_serving_domains: Vec<DomainCount>,
}

pub const TOP_SERVING_DOMAINS: usize = 20;

fn share(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Prevalence statistics over every image-typed response in `d`.
pub fn pixel_prevalence(d: &CrawlDataset, psl: &PublicSuffixTable, th: &PixelThresholds) -> PixelPrevalenceReport {
    let mut total = 0;
    let (mut zero, mut one, mut big, mut unknown) = (0, 0, 0, 0);
    let mut serving: BTreeMap<String, usize> = BTreeMap::new();
    let mut pages_with = 0;
    let mut pages = 0;
    let mut sites_with: BTreeSet<&str> = BTreeSet::new();

    for visit in d.page_visits() {
        let counted_page = !visit.is_orphan();
        pages += counted_page as usize;
        let mut has_pixel = false;
        for t in &visit.transactions {
            let Ok(class) = classify_image(t, th) else {
                continue;
            };
            total += 1;
            match class.kind {
                ImageKind::ZeroContent => zero += 1,
                ImageKind::Invisible1x1 => one += 1,
                ImageKind::BigImage => big += 1,
                ImageKind::UnknownFormat => unknown += 1,
                ImageKind::SmallImage => {}
            }
            if class.is_invisible() {
                has_pixel = true;
                let dom = t.registrable_domain(psl).unwrap_or_else(|_| t.host().to_string());
                *serving.entry(dom).or_default() += 1;
            }
        }
        if has_pixel && counted_page {
            pages_with += 1;
            if !visit.first_party_domain.is_empty() {
                sites_with.insert(&visit.first_party_domain);
            }
        }
    }

    let mut top: Vec<DomainCount> = serving
        .into_iter()
        .map(|(domain, count)| DomainCount { domain, count })
        .collect();
    top.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.domain.cmp(&b.domain)));
    top.truncate(TOP_SERVING_DOMAINS);

    PixelPrevalenceReport {
        total_images: total,
        invisible_images: zero + one,
        zero_content_images: zero,
        one_by_one_images: one,
        big_images: big,
        unknown_format_images: unknown,
        invisible_share: share(zero + one, total),
        zero_content_share: share(zero, total),
        one_by_one_share: share(one, total),
        domains_with_pixel_share: share(sites_with.len(), d.sites().len()),
        pages_with_pixel_share: share(pages_with, pages),
        top_serving_domains: top,
    }
}

/// The invisible-pixel sub-dataset: pixel responses plus their redirect
/// ancestors.
pub fn invisible_subset(
    d: &CrawlDataset,
    th: &PixelThresholds,
    redirect_window_ms: i64,
) -> CrawlDataset {
    let mut keep: HashSet<&str> = HashSet::new();
    for visit in d.page_visits() {
        let graph = RequestGraph::build(visit, redirect_window_ms);
        for t in &visit.transactions {
            if classify_image(t, th).is_ok_and(|c| c.is_invisible()) {
                keep.insert(&t.transaction_id);
                for anc in graph.redirect_ancestors(&t.transaction_id) {
                    keep.insert(&visit.transactions[anc].transaction_id);
                }
            }
        }
    }
    d.retain_transactions(&keep)
}

/// Minimal, valid image bodies for tests and the synthetic generator.
pub mod fixtures {
    /// The canonical 43-byte transparent 1x1 GIF89a.
    pub const TRANSPARENT_GIF: [u8; 43] = [
        0x47, 0x49, 0x46, 0x38, 0x39, 0x61, 0x01, 0x00, 0x01, 0x00, 0x80, 0x00, 0x00, 0xFF, 0xFF, 0xFF, 0x00, 0x00,
        0x00, 0x21, 0xF9, 0x04, 0x01, 0x00, 0x00, 0x00, 0x00, 0x2C, 0x00, 0x00, 0x00, 0x00, 0x01, 0x00, 0x01, 0x00,
        0x00, 0x02, 0x02, 0x44, 0x01, 0x00, 0x3B,
    ];

    /// GIF header + logical screen descriptor with the given size.
    pub fn gif(width: u16, height: u16) -> Vec<u8> {
        let mut v = b"GIF89a".to_vec();
        v.extend_from_slice(&width.to_le_bytes());
        v.extend_from_slice(&height.to_le_bytes());
        v.extend_from_slice(&[0x80, 0x00, 0x00, 0x3B]);
        v
    }

    /// PNG signature followed by an IHDR chunk (CRC not validated by the parser).
    pub fn png(width: u32, height: u32) -> Vec<u8> {
        let mut v = b"\x89PNG\r\n\x1a\n".to_vec();
        v.extend_from_slice(&13u32.to_be_bytes());
        v.extend_from_slice(b"IHDR");
        v.extend_from_slice(&width.to_be_bytes());
        v.extend_from_slice(&height.to_be_bytes());
        v.extend_from_slice(&[8, 6, 0, 0, 0]);
        v.extend_from_slice(&[0, 0, 0, 0]);
        v
    }

    /// SOI, a JFIF APP0 segment, then a baseline SOF0 header.
    pub fn jpeg(width: u16, height: u16) -> Vec<u8> {
        let mut v = vec![0xFF, 0xD8, 0xFF, 0xE0, 0x00, 0x10];
        v.extend_from_slice(b"JFIF\0");
        v.extend_from_slice(&[1, 1, 0, 0, 1, 0, 1, 0, 0]);
        v.extend_from_slice(&[0xFF, 0xC0, 0x00, 0x11, 0x08]);
        v.extend_from_slice(&height.to_be_bytes());
        v.extend_from_slice(&width.to_be_bytes());
        v.extend_from_slice(&[3, 1, 0x22, 0, 2, 0x11, 1, 3, 0x11, 1]);
        v.extend_from_slice(&[0xFF, 0xD9]);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::model::{CrawlLabel, Headers, PageVisit};
    use url::Url;

    fn image_tx(id: &str, ct: &str, body: Option<Vec<u8>>) -> HttpTransaction {
        HttpTransaction {
            transaction_id: id.into(),
            page_visit_id: "pv".into(),
            url: Url::parse(&format!("https://img.cdn.com/{id}")).unwrap(),
            method: "GET".into(),
            request_headers: Headers::default(),
            response_status: Some(200),
            response_headers: [("Content-Type", ct)].into_iter().collect(),
            cookies_sent: vec![],
            cookies_set: vec![],
            body,
            timestamp: 0,
        }
    }

    #[test]
    fn canonical_gif_is_one_by_one() {
        assert_eq!(image_dimensions(&TRANSPARENT_GIF).unwrap(), (ImageFormat::Gif, 1, 1));
    }

    #[test]
    fn png_and_jpeg_headers() {
        assert_eq!(image_dimensions(&png(2, 2)).unwrap(), (ImageFormat::Png, 2, 2));
        assert_eq!(image_dimensions(&jpeg(640, 480)).unwrap(), (ImageFormat::Jpeg, 640, 480));
    }

    #[test]
    fn random_bytes_are_unknown() {
        let junk = [0x13, 0x37, 0x00, 0x42, 0x99, 0x10, 0x20, 0x30, 0x40, 0x50];
        assert_eq!(image_dimensions(&junk), Err(ImageError::UnknownFormat(ImageFormat::Other)));
    }

    #[test]
    fn truncated_headers() {
        assert_eq!(image_dimensions(b"GIF89a\x01"), Err(ImageError::TruncatedHeader(ImageFormat::Gif)));
        assert_eq!(image_dimensions(&png(1, 1)[..20]), Err(ImageError::TruncatedHeader(ImageFormat::Png)));
        assert_eq!(image_dimensions(&[0xFF, 0xD8, 0xFF]), Err(ImageError::TruncatedHeader(ImageFormat::Jpeg)));
    }

    #[test]
    fn webp_is_unsupported() {
        let mut webp = b"RIFF\x00\x00\x00\x00WEBPVP8 ".to_vec();
        webp.extend_from_slice(&[0; 10]);
        assert_eq!(image_dimensions(&webp), Err(ImageError::UnknownFormat(ImageFormat::WebpUnsupported)));
    }

    #[test]
    fn classification_buckets() {
        let th = PixelThresholds::default();
        let k = |t: HttpTransaction| classify_image(&t, &th).unwrap().kind;
        assert_eq!(k(image_tx("a", "image/gif", Some(TRANSPARENT_GIF.to_vec()))), ImageKind::Invisible1x1);
        assert_eq!(k(image_tx("b", "image/png", Some(vec![]))), ImageKind::ZeroContent);
        assert_eq!(k(image_tx("c", "image/png", Some(png(60, 60)))), ImageKind::BigImage);
        assert_eq!(k(image_tx("d", "image/png", Some(png(51, 51)))), ImageKind::BigImage);
        assert_eq!(k(image_tx("e", "image/png", Some(png(50, 50)))), ImageKind::SmallImage);
        assert_eq!(k(image_tx("f", "image/png", Some(png(60, 1)))), ImageKind::SmallImage);
        assert_eq!(k(image_tx("g", "image/png", None)), ImageKind::UnknownFormat);

        let mut declared_zero = image_tx("h", "image/gif", None);
        declared_zero.response_headers.push("Content-Length", "0");
        assert_eq!(k(declared_zero), ImageKind::ZeroContent);

        assert_eq!(
            classify_image(&image_tx("i", "text/html", None), &th),
            Err(ImageError::NotAnImage)
        );
    }

    #[test]
    fn prevalence_arithmetic() {
        let visit = PageVisit {
            page_visit_id: "pv".into(),
            first_party_url: "https://site.com/".into(),
            first_party_domain: "site.com".into(),
            transactions: vec![
                image_tx("a", "image/gif", Some(TRANSPARENT_GIF.to_vec())),
                image_tx("b", "image/gif", Some(vec![])),
                image_tx("c", "image/png", Some(png(100, 100))),
                image_tx("d", "image/jpeg", Some(jpeg(300, 200))),
                image_tx("e", "text/html", None),
            ],
        };
        let d = CrawlDataset::new(CrawlLabel::A, vec![visit], vec![]);
        let r = pixel_prevalence(&d, &PublicSuffixTable::naive(), &PixelThresholds::default());
        assert_eq!(r.total_images, 4);
        assert_eq!(r.invisible_share, 0.5);
        assert_eq!(r.one_by_one_share + r.zero_content_share, r.invisible_share);
        assert_eq!(r.pages_with_pixel_share, 1.0);
        assert_eq!(r.top_serving_domains, vec![DomainCount { domain: "cdn.com".into(), count: 2 }]);

        let empty = pixel_prevalence(&CrawlDataset::empty(CrawlLabel::A), &PublicSuffixTable::naive(), &PixelThresholds::default());
        assert_eq!(empty.total_images, 0);
        assert_eq!(empty.invisible_share, 0.0);
        assert_eq!(empty.domains_with_pixel_share, 0.0);
    }
}

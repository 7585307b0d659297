//! The built-in product catalog.
//!
//! `data/catalog.tsv` has one product per line:
//!
//! ```text
//! name <TAB> attr1|attr2|... <TAB> min_price <TAB> max_price
//! ```
//!
//! Lines starting with `#` and blank lines are ignored. Prices are whole dollars.

use thiserror::Error;

const BUILTIN: &str = include_str!("../data/catalog.tsv");

#[derive(Debug, Error, PartialEq, Eq)]
#[error("catalog line {line}: {message}")]
pub struct CatalogError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Product {
    pub id: usize,
    pub name: String,
    pub attributes: Vec<String>,
    pub min_price: u32,
    pub max_price: u32,
}

#[derive(Debug, Clone)]
pub struct Catalog {
    products: Vec<Product>,
}

impl Catalog {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("built-in catalog is well formed")
    }

    pub fn parse(text: &str) -> Result<Self, CatalogError> {
        let mut products = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| CatalogError { line, message };
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = raw.split('\t').collect();
            let [name, attrs, lo, hi] = cols[..] else {
                return Err(err(format!("expected 4 tab-separated columns, got {}", cols.len())));
            };
            let name = name.trim();
            if name.is_empty() {
                return Err(err("empty product name".into()));
            }
            let min_price: u32 = lo.trim().parse().map_err(|e| err(format!("min_price: {e}")))?;
            let max_price: u32 = hi.trim().parse().map_err(|e| err(format!("max_price: {e}")))?;
            if min_price == 0 || min_price > max_price {
                return Err(err(format!("bad price range {min_price}..{max_price}")));
            }
            let attributes = attrs
                .split('|')
                .map(str::trim)
                .filter(|a| !a.is_empty())
                .map(String::from)
                .collect();
            products.push(Product {
                id: products.len(),
                name: name.to_string(),
                attributes,
                min_price,
                max_price,
            });
        }
        if products.is_empty() {
            return Err(CatalogError {
                line: 0,
                message: "catalog has no products".into(),
            });
        }
        Ok(Self { products })
    }

    pub fn products(&self) -> &[Product] {
        &self.products
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }
}

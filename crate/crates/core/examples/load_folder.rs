//! Write a tiny class-per-directory PNG tree and load it back.

use sar_wcl::data::load_image_folder;

fn main() -> sar_wcl::Result<()> {
    let root = std::env::temp_dir().join("wcl-folder-example");
    for (c, class) in ["tank", "truck"].iter().enumerate() {
        let dir = root.join(class);
        std::fs::create_dir_all(&dir).map_err(|e| sar_wcl::Error::io(&dir, e))?;
        for i in 0..3u8 {
            let img = image::GrayImage::from_fn(20, 20, |x, y| image::Luma([((x + y) as u8 * 5).wrapping_add(40 * c as u8 + i)]));
            let path = dir.join(format!("{i}.png"));
            img.save(&path).map_err(|e| sar_wcl::Error::input(format!("{}: {e}", path.display())))?;
        }
    }
    // resized to the encoder side on load
    let ds = load_image_folder(&root, 16)?;
    println!("{} images, classes {:?}, size {:?}", ds.len(), ds.class_names(), ds.image_size());
    for s in ds.items().iter().take(3) {
        println!("  {} -> class {}", s.id, s.label);
    }
    Ok(())
}

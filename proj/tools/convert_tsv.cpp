// Converts a detection TSV dump into scenes.bin. Exit codes: 0 success,
// 1 usage error, 2 input error.

#include <iostream>

#include "CLI11.hpp"
#include "vqag/dataset_io.hpp"
#include "vqag/tsv_import.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Convert a tab-separated detection dump (base64 float32 boxes and features) to scenes.bin"};
  std::string in, out;
  vqag::Index max_boxes = 0;
  app.add_option("-i,--input", in, "TSV file: image_id, image_w, image_h, num_boxes, boxes, features")->required();
  app.add_option("-o,--out", out, "Output scenes.bin")->required();
  app.add_option("--max-boxes", max_boxes, "Keep the first n detections per image (0 keeps all)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  try {
    const auto scenes = vqag::parse_detection_tsv(vqag::read_file(in), max_boxes);
    vqag::write_features(out, scenes);
    std::cout << "wrote " << scenes.size() << " scenes to " << out << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

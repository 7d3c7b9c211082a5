#include <mmes/image_io.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "support/oracles.hpp"

namespace {

using mmes::DenseTensor;

class ImageIoTest : public ::testing::Test {
  protected:
    void SetUp() override {
        dir_ = std::filesystem::temp_directory_path() /
               ("mmes_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                ::testing::UnitTest::GetInstance()->current_test_info()->name());
        std::filesystem::create_directories(dir_);
    }
    void TearDown() override { std::filesystem::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    std::filesystem::path dir_;
};

double max_abs_diff(const DenseTensor& a, const DenseTensor& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    }
    return worst;
}

TEST_F(ImageIoTest, BlackAndWhiteRoundTripExactly) {
    for (const char* name : {"flat.png", "flat.pgm"}) {
        for (double level : {0.0, 1.0}) {
            DenseTensor x = DenseTensor::zeros({9, 7});
            for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = level;
            mmes::save_image(x, path(name));
            const DenseTensor back = mmes::load_image(path(name));
            ASSERT_EQ(back.shape(), x.shape());
            EXPECT_EQ(max_abs_diff(back, x), 0.0) << name << " at level " << level;
        }
    }
}

TEST_F(ImageIoTest, RandomGrayscaleRoundTripStaysWithinHalfAStep) {
    const DenseTensor x = oracle::random_tensor({13, 21}, 11);
    DenseTensor unit = x;
    for (std::size_t i = 0; i < unit.size(); ++i) unit.data()[i] = 0.5 * (unit.data()[i] + 1.0);
    for (const char* name : {"rand.png", "rand.pgm"}) {
        mmes::save_image(unit, path(name));
        const DenseTensor back = mmes::load_image(path(name));
        ASSERT_EQ(back.shape(), unit.shape());
        EXPECT_LE(max_abs_diff(back, unit), 1.0 / 510.0) << name;

        mmes::save_image(back, path(std::string("again_") + name));
        const DenseTensor again = mmes::load_image(path(std::string("again_") + name));
        EXPECT_EQ(max_abs_diff(again, back), 0.0) << "quantized images should be fixed points";
    }
}

TEST_F(ImageIoTest, ColorImagesKeepChannelLayout) {
    std::mt19937_64 rng(29);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    DenseTensor x = DenseTensor::zeros({6, 5, 3});
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = dist(rng);
    x.at({2, 3, 0}) = 1.0;
    x.at({2, 3, 1}) = 0.0;
    x.at({2, 3, 2}) = 0.0;
    for (const char* name : {"color.png", "color.ppm"}) {
        mmes::save_image(x, path(name));
        const DenseTensor back = mmes::load_image(path(name));
        ASSERT_EQ(back.ndim(), 3u);
        ASSERT_EQ(back.shape(), (std::vector<std::size_t>{6, 5, 3}));
        EXPECT_LE(max_abs_diff(back, x), 1.0 / 510.0) << name;
        EXPECT_EQ(back.at({2, 3, 0}), 1.0);
        EXPECT_EQ(back.at({2, 3, 1}), 0.0);
        EXPECT_EQ(back.at({2, 3, 2}), 0.0);
    }
}

TEST_F(ImageIoTest, SaveClampsOutOfRangeValuesAndRoundsHalves) {
    DenseTensor x = DenseTensor::zeros({1, 4});
    x.at({0, 0}) = -0.75;
    x.at({0, 1}) = 1.5;
    x.at({0, 2}) = 0.5;
    x.at({0, 3}) = 127.0 / 255.0;
    mmes::save_image(x, path("clamp.pgm"));
    const DenseTensor back = mmes::load_image(path("clamp.pgm"));
    EXPECT_EQ(back.at({0, 0}), 0.0);
    EXPECT_EQ(back.at({0, 1}), 1.0);
    EXPECT_EQ(back.at({0, 2}), 128.0 / 255.0);
    EXPECT_EQ(back.at({0, 3}), 127.0 / 255.0);
}

TEST_F(ImageIoTest, RejectsMissingDeepOrMalformedFiles) {
    EXPECT_THROW(mmes::load_image(path("absent.png")), std::runtime_error);

    {
        std::ofstream os(path("deep.pgm"), std::ios::binary);
        os << "P5\n2 2\n65535\n";
        const char bytes[8] = {};
        os.write(bytes, 8);
    }
    EXPECT_THROW(mmes::load_image(path("deep.pgm")), std::runtime_error);

    {
        std::ofstream os(path("noise.png"), std::ios::binary);
        os << "this is not an image";
    }
    EXPECT_THROW(mmes::load_image(path("noise.png")), std::runtime_error);

    {
        std::ofstream os(path("short.ppm"), std::ios::binary);
        os << "P6\n4 4\n255\n";
        const char bytes[5] = {};
        os.write(bytes, 5);
    }
    EXPECT_THROW(mmes::load_image(path("short.ppm")), std::runtime_error);

    const DenseTensor plane = DenseTensor::zeros({2, 2});
    const DenseTensor volume = DenseTensor::zeros({2, 2, 2});
    EXPECT_THROW(mmes::save_image(volume, path("bad.png")), std::invalid_argument);
    EXPECT_THROW(mmes::save_image(plane, path("bad.ppm")), std::invalid_argument);
    EXPECT_THROW(mmes::save_image(plane, path("bad.txt")), std::invalid_argument);
}

TEST_F(ImageIoTest, PnmHeadersMayCarryCommentsAndOddSpacing) {
    {
        std::ofstream os(path("commented.pgm"), std::ios::binary);
        os << "P5 # magic\n# a comment line\n  3\t2 # extents\n255\n";
        const unsigned char bytes[6] = {0, 51, 102, 153, 204, 255};
        os.write(reinterpret_cast<const char*>(bytes), 6);
    }
    const DenseTensor x = mmes::load_image(path("commented.pgm"));
    ASSERT_EQ(x.shape(), (std::vector<std::size_t>{2, 3}));
    EXPECT_EQ(x.at({0, 0}), 0.0);
    EXPECT_EQ(x.at({0, 1}), 51.0 / 255.0);
    EXPECT_EQ(x.at({1, 2}), 1.0);
}

TEST_F(ImageIoTest, SignalCsvRoundTripsExactly) {
    DenseTensor x = DenseTensor::zeros({64});
    std::mt19937_64 rng(7);
    std::normal_distribution<double> dist(0.0, 2.5);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = dist(rng);
    mmes::save_signal_csv(x, path("sig.csv"));
    const DenseTensor back = mmes::load_signal_csv(path("sig.csv"));
    ASSERT_EQ(back.shape(), x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_EQ(back.data()[i], x.data()[i]) << "slot " << i;
    }
}

TEST_F(ImageIoTest, SignalCsvSkipsHeaderAndBlankLinesOnly) {
    {
        std::ofstream os(path("headed.csv"));
        os << "value\n\n1.5\n  -2.25\n\n0\n";
    }
    const DenseTensor x = mmes::load_signal_csv(path("headed.csv"));
    ASSERT_EQ(x.shape(), (std::vector<std::size_t>{3}));
    EXPECT_EQ(x.at({0}), 1.5);
    EXPECT_EQ(x.at({1}), -2.25);
    EXPECT_EQ(x.at({2}), 0.0);

    {
        std::ofstream os(path("broken.csv"));
        os << "1.0\noops\n2.0\n";
    }
    EXPECT_THROW(mmes::load_signal_csv(path("broken.csv")), std::runtime_error);
    EXPECT_THROW(mmes::load_signal_csv(path("absent.csv")), std::runtime_error);
    EXPECT_THROW(mmes::save_signal_csv(DenseTensor::zeros({2, 2}), path("mat.csv")),
                 std::invalid_argument);
}

TEST_F(ImageIoTest, TensorDumpRoundTripsBitwise) {
    const DenseTensor x = oracle::random_tensor({4, 3, 2}, 17);
    mmes::save_tensor(x, path("z.bin"));
    const DenseTensor back = mmes::load_tensor(path("z.bin"));
    ASSERT_EQ(back.shape(), x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(back.data()[i], x.data()[i]);

    {
        std::ofstream os(path("junk.bin"), std::ios::binary);
        os << "MMESTN99garbage";
    }
    EXPECT_THROW(mmes::load_tensor(path("junk.bin")), std::runtime_error);
}

}  // namespace
